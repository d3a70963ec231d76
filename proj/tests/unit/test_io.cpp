#include <cstring>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "pmdiff/io.hpp"

using namespace pmdiff;
namespace fs = std::filesystem;

TEST_CASE("PPM round trip quantizes to 8 bits") {
    std::mt19937_64 rng(91);
    std::uniform_int_distribution<int> level(0, 255);
    Image img(7, 5, 3);
    for (auto& v : img.data) v = level(rng) / 255.0;
    const auto bytes = io::encode_ppm(img);
    CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");
    const Image back = io::decode_ppm(bytes);
    CHECK(back.data == img.data);
    CHECK(io::encode_ppm(back) == bytes);
    CHECK_THROWS_AS(io::decode_ppm({'P', '3'}), io::IoError);
}

TEST_CASE("PFM stores float32 bottom-to-top") {
    Image img(3, 2, 1);
    for (std::size_t i = 0; i < 6; ++i) img.data[i] = 0.5 * static_cast<double>(i);
    const auto bytes = io::encode_pfm(img);
    const std::string head(bytes.begin(), bytes.begin() + 12);
    CHECK(head.rfind("Pf\n3 2\n-1", 0) == 0);
    // first stored row is the bottom image row: values 1.5, 2.0, 2.5
    const std::size_t payload = bytes.size() - 6 * 4;
    float first = 0.0f;
    std::memcpy(&first, bytes.data() + payload, 4);
    CHECK(first == 1.5f);
    CHECK(io::decode_pfm(bytes).data == img.data);

    Image rgb(2, 2, 3, 0.25);
    CHECK(io::decode_pfm(io::encode_pfm(rgb)).channels == 3);
}

TEST_CASE("depth and point map conversions keep validity") {
    DepthMap d(3, 2);
    d.set(1, 0, 2.5);
    const DepthMap back = io::depth_from_image(io::depth_to_image(d));
    CHECK(back.valid == d.valid);
    CHECK(back.depth == d.depth);
    PointMap m(2, 2, 1);
    m.set(3, Vec3(1, -2, 3));
    const PointMap mb = io::pointmap_from_image(io::pointmap_to_image(m), 1);
    CHECK(mb.valid == m.valid);
    CHECK(mb.point(3) == Vec3(1, -2, 3));
}

TEST_CASE("LiDAR scans round trip through float32") {
    LidarScan s;
    s.points = {Vec3(1.5, -2.25, 3.0), Vec3(0.0, 0.5, 80.0)};
    const auto bytes = io::encode_pmls(s);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PMLS");
    CHECK(bytes.size() == 4 + 8 + 2 * 12);
    const LidarScan back = io::decode_pmls(bytes);
    REQUIRE(back.points.size() == 2);
    CHECK(back.points[0] == s.points[0]);
    auto bad = bytes;
    bad.pop_back();
    CHECK_THROWS_AS(io::decode_pmls(bad), io::IoError);
}

TEST_CASE("JSON documents round trip") {
    CameraView v;
    v.intrinsics.fx = 40;
    v.intrinsics.fy = 41;
    v.intrinsics.cx = 24;
    v.intrinsics.cy = 16;
    v.intrinsics.width = 48;
    v.intrinsics.height = 32;
    v.pose = Rigid::from_rt(Rigid::rotation_y(0.4).rotation(), Vec3(1, 2, 3));
    const auto j = io::camera_to_json(v);
    CHECK(j.at("pose").size() == 16);
    const CameraView back = io::camera_from_json(j);
    CHECK(back.pose.matrix() == v.pose.matrix());
    CHECK(back.intrinsics.fy == 41);

    const SceneSpec scene = random_scene(92);
    const SceneSpec sb = io::scene_from_json(io::scene_to_json(scene));
    CHECK(io::scene_to_json(sb).dump() == io::scene_to_json(scene).dump());

    EncodingConfig cfg;
    cfg.coefficients = {1.0, 0.5, 0.25, 0.125};
    CHECK(io::encoding_from_json(io::encoding_to_json(cfg)).coefficients == cfg.coefficients);
}

TEST_CASE("SHA-256 of known inputs") {
    CHECK(io::sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const std::string abc = "abc";
    CHECK(io::sha256_hex(std::vector<std::uint8_t>(abc.begin(), abc.end())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
