#include "pmdiff/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pmdiff/bytes.hpp"

namespace pmdiff::io {

namespace {

// Reads whitespace-separated header tokens of a netpbm-style header; a single
// whitespace byte follows the last token.
struct HeaderParser {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    const char* what;

    std::string token() {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(buf[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < buf.size() && !std::isspace(buf[pos])) t.push_back(static_cast<char>(buf[pos++]));
        if (t.empty()) throw IoError(std::string(what) + ": truncated header");
        return t;
    }
    void end_header() {
        if (pos >= buf.size() || !std::isspace(buf[pos])) throw IoError(std::string(what) + ": malformed header");
        ++pos;
    }
};

std::size_t parse_size(const std::string& s, const char* what) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || v == 0 || v > (1ull << 24)) throw IoError(std::string(what) + ": bad dimension '" + s + "'");
    return static_cast<std::size_t>(v);
}

void append(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& rgb) {
    if (rgb.channels != 3) throw IoError("ppm: image must have 3 channels");
    std::vector<std::uint8_t> out;
    append(out, "P6\n" + std::to_string(rgb.width) + " " + std::to_string(rgb.height) + "\n255\n");
    out.reserve(out.size() + rgb.data.size());
    for (double v : rgb.data) {
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
    return out;
}

Image decode_ppm(const std::vector<std::uint8_t>& buf) {
    HeaderParser h{buf, 0, "ppm"};
    if (h.token() != "P6") throw IoError("ppm: expected P6 magic");
    const std::size_t w = parse_size(h.token(), "ppm"), ht = parse_size(h.token(), "ppm");
    if (h.token() != "255") throw IoError("ppm: only maxval 255 is supported");
    h.end_header();
    if (buf.size() - h.pos != w * ht * 3) throw IoError("ppm: pixel payload size mismatch");
    Image img(w, ht, 3);
    for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = buf[h.pos + k] / 255.0;
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) { bytes::write_file(path, encode_ppm(rgb)); }
Image read_ppm(const std::filesystem::path& path) { return decode_ppm(bytes::read_file(path)); }

std::vector<std::uint8_t> encode_pfm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("pfm: image must have 1 or 3 channels");
    std::vector<std::uint8_t> out;
    append(out, std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n-1.0\n");
    for (std::size_t row = img.height; row-- > 0;) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) bytes::put_le(out, static_cast<float>(img.at(x, row, c)));
        }
    }
    return out;
}

Image decode_pfm(const std::vector<std::uint8_t>& buf) {
    HeaderParser h{buf, 0, "pfm"};
    const std::string magic = h.token();
    std::size_t channels = 0;
    if (magic == "PF") channels = 3;
    else if (magic == "Pf") channels = 1;
    else throw IoError("pfm: expected PF or Pf magic");
    const std::size_t w = parse_size(h.token(), "pfm"), ht = parse_size(h.token(), "pfm");
    const std::string scale_tok = h.token();
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw IoError("pfm: bad scale '" + scale_tok + "'");
    }
    if (!(scale < 0.0)) throw IoError("pfm: only little-endian (negative scale) files are supported");
    h.end_header();
    std::vector<std::uint8_t> payload(buf.begin() + static_cast<std::ptrdiff_t>(h.pos), buf.end());
    if (payload.size() != w * ht * channels * 4) throw IoError("pfm: pixel payload size mismatch");
    bytes::Reader r(payload, "pfm");
    Image img(w, ht, channels);
    for (std::size_t row = ht; row-- > 0;) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) img.at(x, row, c) = r.get_le<float>();
        }
    }
    return img;
}

void write_pfm(const std::filesystem::path& path, const Image& img) { bytes::write_file(path, encode_pfm(img)); }
Image read_pfm(const std::filesystem::path& path) { return decode_pfm(bytes::read_file(path)); }

Image depth_to_image(const DepthMap& d) {
    Image img(d.width, d.height, 1);
    for (std::size_t p = 0; p < d.depth.size(); ++p) img.data[p] = d.valid[p] ? d.depth[p] : 0.0;
    return img;
}

DepthMap depth_from_image(const Image& img) {
    if (img.channels != 1) throw IoError("depth: expected a 1-channel image");
    DepthMap d(img.width, img.height);
    for (std::size_t p = 0; p < img.data.size(); ++p) d.set(p % img.width, p / img.width, img.data[p]);
    return d;
}

Image pointmap_to_image(const PointMap& m) {
    Image img(m.width, m.height, 3);
    img.data = m.xyz;
    return img;
}

PointMap pointmap_from_image(const Image& img, int frame) {
    if (img.channels != 3) throw IoError("point map: expected a 3-channel image");
    PointMap m(img.width, img.height, frame);
    for (std::size_t p = 0; p < m.size(); ++p) {
        const Vec3 v(img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2]);
        if (v.allFinite() && !v.isZero(0.0)) m.set(p, v);
    }
    return m;
}

Image mask_to_image(const Mask& m) {
    Image img(m.width, m.height, 1);
    for (std::size_t p = 0; p < m.data.size(); ++p) img.data[p] = m.data[p] ? 1.0 : 0.0;
    return img;
}

std::vector<std::uint8_t> encode_pmls(const LidarScan& scan) {
    std::vector<std::uint8_t> out;
    append(out, "PMLS");
    bytes::put_le<std::uint64_t>(out, scan.points.size());
    for (const auto& p : scan.points) {
        for (int k = 0; k < 3; ++k) bytes::put_le(out, static_cast<float>(p[k]));
    }
    return out;
}

LidarScan decode_pmls(const std::vector<std::uint8_t>& buf) {
    bytes::Reader r(buf, "pmls");
    if (r.get_string(4) != "PMLS") throw IoError("pmls: bad magic");
    const auto n = r.get_le<std::uint64_t>();
    if (n > r.remaining() / 12 || r.remaining() != n * 12) throw IoError("pmls: payload size mismatch");
    LidarScan scan;
    scan.points.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        const double x = r.get_le<float>(), y = r.get_le<float>(), z = r.get_le<float>();
        const Vec3 p(x, y, z);
        if (!p.allFinite()) throw IoError("pmls: non-finite point " + std::to_string(k));
        scan.points.push_back(p);
    }
    return scan;
}

void write_pmls(const std::filesystem::path& path, const LidarScan& scan) {
    bytes::write_file(path, encode_pmls(scan));
}
LidarScan read_pmls(const std::filesystem::path& path) { return decode_pmls(bytes::read_file(path)); }

// ---------------------------------------------------------------------------

Json camera_to_json(const CameraView& view) {
    const auto& k = view.intrinsics;
    Json j;
    j["fx"] = k.fx;
    j["fy"] = k.fy;
    j["cx"] = k.cx;
    j["cy"] = k.cy;
    j["width"] = k.width;
    j["height"] = k.height;
    const auto rm = view.pose.row_major();
    j["pose"] = std::vector<double>(rm.begin(), rm.end());
    return j;
}

CameraView camera_from_json(const Json& j) {
    CameraView v;
    try {
        v.intrinsics.fx = j.at("fx").get<double>();
        v.intrinsics.fy = j.at("fy").get<double>();
        v.intrinsics.cx = j.at("cx").get<double>();
        v.intrinsics.cy = j.at("cy").get<double>();
        v.intrinsics.width = j.at("width").get<std::size_t>();
        v.intrinsics.height = j.at("height").get<std::size_t>();
        const auto pose = j.at("pose").get<std::vector<double>>();
        if (pose.size() != 16) throw IoError("camera json: pose must have 16 entries");
        v.pose = Rigid::from_row_major(std::span<const double, 16>(pose.data(), 16));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("camera json: ") + e.what());
    }
    v.intrinsics.validate(false);
    return v;
}

namespace {

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const Json& j) {
    const auto a = j.get<std::vector<double>>();
    if (a.size() != 3) throw IoError("scene json: expected a 3-vector");
    return {a[0], a[1], a[2]};
}

const char* kind_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::Plane: return "plane";
        case PrimitiveKind::Sphere: return "sphere";
        case PrimitiveKind::Box: return "box";
    }
    return "?";
}

}  // namespace

Json scene_to_json(const SceneSpec& scene) {
    Json j;
    j["seed"] = scene.seed;
    j["sky"] = vec_json(scene.sky);
    Json prims = Json::array();
    for (const auto& p : scene.primitives) {
        Json q;
        q["kind"] = kind_name(p.kind);
        switch (p.kind) {
            case PrimitiveKind::Plane:
                q["point"] = vec_json(p.a);
                q["normal"] = vec_json(p.b);
                break;
            case PrimitiveKind::Sphere:
                q["center"] = vec_json(p.a);
                q["radius"] = p.radius;
                break;
            case PrimitiveKind::Box:
                q["min"] = vec_json(p.a);
                q["max"] = vec_json(p.b);
                break;
        }
        q["color_a"] = vec_json(p.material.color_a);
        q["color_b"] = vec_json(p.material.color_b);
        q["checker"] = p.material.checker;
        prims.push_back(q);
    }
    j["primitives"] = prims;
    return j;
}

SceneSpec scene_from_json(const Json& j) {
    SceneSpec s;
    try {
        s.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("sky")) s.sky = vec_from(j.at("sky"));
        for (const auto& q : j.at("primitives")) {
            Primitive p;
            const auto kind = q.at("kind").get<std::string>();
            if (kind == "plane") {
                p.kind = PrimitiveKind::Plane;
                p.a = vec_from(q.at("point"));
                p.b = vec_from(q.at("normal"));
            } else if (kind == "sphere") {
                p.kind = PrimitiveKind::Sphere;
                p.a = vec_from(q.at("center"));
                p.radius = q.at("radius").get<double>();
            } else if (kind == "box") {
                p.kind = PrimitiveKind::Box;
                p.a = vec_from(q.at("min"));
                p.b = vec_from(q.at("max"));
            } else {
                throw IoError("scene json: unknown primitive kind '" + kind + "'");
            }
            p.material.color_a = vec_from(q.at("color_a"));
            p.material.color_b = q.contains("color_b") ? vec_from(q.at("color_b")) : p.material.color_a;
            p.material.checker = q.value("checker", 0.0);
            s.primitives.push_back(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("scene json: ") + e.what());
    }
    s.validate();
    return s;
}

Json encoding_to_json(const EncodingConfig& cfg) {
    Json j;
    j["frequencies"] = cfg.frequencies;
    j["coefficients"] = cfg.coefficients;
    j["channel_order"] = "axis-major; per frequency cos then sin";
    return j;
}

EncodingConfig encoding_from_json(const Json& j) {
    EncodingConfig cfg;
    if (j.contains("frequencies")) cfg.frequencies = j.at("frequencies").get<std::vector<double>>();
    if (j.contains("coefficients")) cfg.coefficients = j.at("coefficients").get<std::vector<double>>();
    cfg.validate();
    return cfg;
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    const std::string s = j.dump(2) + "\n";
    bytes::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::string sha256_hex(const std::vector<std::uint8_t>& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256: digest failed");
    std::ostringstream os;
    for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
    return os.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(bytes::read_file(path)); }

}  // namespace pmdiff::io
