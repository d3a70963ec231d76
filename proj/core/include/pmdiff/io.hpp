#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <cstdint>
#include <string>
#include <vector>

#include "pmdiff/encode.hpp"
#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"
#include "pmdiff/synth.hpp"

namespace pmdiff::io {

using Json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// PPM P6, maxval 255. Values are clamped to [0,1] and rounded.
std::vector<std::uint8_t> encode_ppm(const Image& rgb);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);
void write_ppm(const std::filesystem::path& path, const Image& rgb);
Image read_ppm(const std::filesystem::path& path);

// PFM: "PF" (3 channels) or "Pf" (1 channel), scale -1 (little-endian),
// rows stored bottom-to-top.
std::vector<std::uint8_t> encode_pfm(const Image& img);
Image decode_pfm(const std::vector<std::uint8_t>& bytes);
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

// Invalid depth is stored as 0; point maps store (0,0,0) for invalid pixels.
Image depth_to_image(const DepthMap& d);
DepthMap depth_from_image(const Image& img);
Image pointmap_to_image(const PointMap& m);
PointMap pointmap_from_image(const Image& img, int frame);
Image mask_to_image(const Mask& m);

// LiDAR: "PMLS", u64 count, count * 3 float32 little-endian.
std::vector<std::uint8_t> encode_pmls(const LidarScan& scan);
LidarScan decode_pmls(const std::vector<std::uint8_t>& bytes);
void write_pmls(const std::filesystem::path& path, const LidarScan& scan);
LidarScan read_pmls(const std::filesystem::path& path);

Json camera_to_json(const CameraView& view);
CameraView camera_from_json(const Json& j);

Json scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const Json& j);

Json encoding_to_json(const EncodingConfig& cfg);
EncodingConfig encoding_from_json(const Json& j);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// Lower-case hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pmdiff::io
