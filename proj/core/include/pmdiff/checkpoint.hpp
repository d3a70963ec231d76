#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmdiff/gradcheck.hpp"
#include "pmdiff/tensor.hpp"

namespace pmdiff {

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus an optional JSON metadata blob.
///
/// Layout (all integers little-endian):
///   "PMDK" | u32 version | u64 count |
///   count x ( u32 name_len | name | u32 rank | rank x u64 dim | numel x f64 )
///   [ "META" | u64 len | UTF-8 JSON ]   -- optional trailer
struct Checkpoint {
    std::vector<NamedTensor> tensors;
    std::string metadata_json;

    const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace pmdiff
