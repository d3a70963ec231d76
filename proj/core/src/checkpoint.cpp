#include "pmdiff/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "pmdiff/bytes.hpp"

namespace pmdiff {

namespace bytes {

void Reader::need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(what_ + ": truncated input");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace bytes

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out{'P', 'M', 'D', 'K'};
    bytes::put_le<std::uint32_t>(out, kCheckpointVersion);
    bytes::put_le<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        bytes::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        bytes::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) bytes::put_le<std::uint64_t>(out, d);
        for (double v : t.data()) bytes::put_le<double>(out, v);
    }
    if (!ckpt.metadata_json.empty()) {
        out.insert(out.end(), {'M', 'E', 'T', 'A'});
        bytes::put_le<std::uint64_t>(out, ckpt.metadata_json.size());
        out.insert(out.end(), ckpt.metadata_json.begin(), ckpt.metadata_json.end());
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& buf) {
    bytes::Reader r(buf, "PMDK");
    if (r.get_string(4) != "PMDK") throw FormatError("PMDK: bad magic");
    const auto version = r.get_le<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError("PMDK: unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto count = r.get_le<std::uint64_t>();
    Checkpoint ckpt;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.get_le<std::uint32_t>();
        std::string name = r.get_string(name_len);
        const auto rank = r.get_le<std::uint32_t>();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get_le<std::uint64_t>());
        const std::size_t n = shape_numel(shape);
        r.need(n * sizeof(double));
        std::vector<double> values(n);
        for (auto& v : values) v = r.get_le<double>();
        ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    }
    if (!r.at_end()) {
        if (r.get_string(4) != "META") throw FormatError("PMDK: unexpected trailing bytes");
        const auto len = r.get_le<std::uint64_t>();
        ckpt.metadata_json = r.get_string(len);
        if (!r.at_end()) throw FormatError("PMDK: unexpected trailing bytes after metadata");
    }
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    bytes::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(bytes::read_file(path)); }

}  // namespace pmdiff
