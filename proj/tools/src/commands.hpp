#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pmdiff/geometry.hpp"
#include "pmdiff/io.hpp"
#include "pmdiff/microdiff.hpp"
#include "pmdiff/pair.hpp"
#include "pmdiff/synth.hpp"

namespace pmdiff::cli {

namespace fs = std::filesystem;
using Json = io::Json;

/// Raised for bad user input; the driver prints it and exits with status 1.
class CommandError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct GlobalOptions {
    std::uint64_t seed = 0;
    int threads = 1;
};

// ---------------------------------------------------------------------------
// Dataset layout: scene.json, views/NNN.{ppm,pfm,json}, lidar/NNN.pmls and a
// manifest.json listing every file with its SHA-256.

struct SynthOptions {
    fs::path out;
    std::optional<fs::path> scene_config;  // SceneSpec JSON; a random scene otherwise
    std::size_t frames = 60;
    std::size_t width = 48;
    std::size_t height = 32;
    double focal = 40.0;
    double step = 0.2;
    double heading_degrees = 0.0;
    std::vector<double> start{0.0, -1.5, 0.0};
    std::string augment = "none";
    double augment_magnitude = 0.0;
    bool lidar = true;
};

std::string view_stem(std::size_t index);

/// Writes the dataset and returns the manifest.
Json run_synth(const SynthOptions& opt, const GlobalOptions& g);

struct VerifyReport {
    std::size_t checked = 0;
    std::vector<std::string> problems;
    bool ok() const { return problems.empty(); }
};

VerifyReport verify_dataset(const fs::path& dataset);

struct DatasetView {
    Image rgb;
    DepthMap depth;
    CameraView camera;
    std::optional<LidarScan> lidar;
    std::vector<fs::path> files;  // what was read
};

std::size_t dataset_frame_count(const fs::path& dataset);
DatasetView load_view(const fs::path& dataset, std::size_t index, bool with_lidar);

/// Pair of dataset views with point maps built from the requested source.
ScenePair load_pair(const fs::path& dataset, std::size_t reference, std::size_t target, GeometrySource source,
                    std::vector<fs::path>* files_read = nullptr);

// ---------------------------------------------------------------------------
// Pairs

struct PairsOptions {
    fs::path dataset;
    fs::path out;
    double overlap_threshold = 0.2;
    double tolerance = 0.25;  // metres; about one pixel footprint at 10 m and focal 40
    double lidar_probability = 0.0;
    std::size_t max_gap = 0;  // 0 means any frame distance
    bool include_self = false;
};

Json run_pairs(const PairsOptions& opt, const GlobalOptions& g);

struct PairEntry {
    fs::path dataset;
    std::size_t reference = 0;
    std::size_t target = 0;
    GeometrySource geometry = GeometrySource::Depth;
};

std::vector<PairEntry> read_pair_list(const fs::path& path);

// ---------------------------------------------------------------------------
// Training, sampling and refinement

struct TrainOptions {
    std::vector<fs::path> pairs;
    fs::path out;
    std::optional<fs::path> base;  // checkpoint whose base weights skip pretraining
    std::size_t pretrain_steps = 2000;
    std::size_t conditional_steps = 500;
    std::size_t batch = 8;
    double pretrain_lr = 2e-3;
    double conditional_lr = 1e-4;
    std::size_t log_every = 50;
    std::size_t probe_size = 16;
    std::vector<std::size_t> widths{8, 16, 16};
    std::size_t time_dim = 32;
    std::size_t embed_dim = 64;
    std::size_t diffusion_steps = 100;
};

Json run_train(const TrainOptions& opt, const GlobalOptions& g);

struct SampleOptions {
    fs::path model;
    fs::path out;
    std::optional<fs::path> pairs;  // pair list plus index, or explicit views
    std::size_t index = 0;
    std::optional<fs::path> dataset;
    std::size_t reference = 0;
    std::size_t target = 1;
    std::string geometry = "depth";
    std::size_t steps = kDefaultSamplerSteps;
};

Json run_sample(const SampleOptions& opt, const GlobalOptions& g);

struct RefineOptions {
    fs::path model;
    fs::path input;
    fs::path out;
    double s = 0.4;
    std::size_t steps = kDefaultSamplerSteps;
};

Json run_refine(const RefineOptions& opt, const GlobalOptions& g);

// ---------------------------------------------------------------------------
// Editing and evaluation

struct EditOptions {
    fs::path dataset;
    std::size_t view = 0;
    fs::path out;
    std::vector<double> box;        // cx cy cz hx hy hz [yaw]
    std::vector<double> translate;  // world metres
    double yaw_degrees = 0.0;       // rotation about the box centre
    std::string mode = "translate";
};

Json run_edit(const EditOptions& opt, const GlobalOptions& g);

struct EvalOptions {
    fs::path pred;
    fs::path gt;
    std::optional<fs::path> pred_depth;
    std::optional<fs::path> gt_depth;
    std::optional<fs::path> out;
};

Json run_eval(const EvalOptions& opt, const GlobalOptions& g);

}  // namespace pmdiff::cli
