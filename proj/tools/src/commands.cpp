#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>

#include "pmdiff/correspond.hpp"
#include "pmdiff/metrics.hpp"
#include "pmdiff/pipeline.hpp"
#include "pmdiff/trainer.hpp"

namespace pmdiff::cli {

namespace {

constexpr const char* kDatasetFormat = "pmdiff-dataset";
constexpr int kDatasetVersion = 1;
constexpr const char* kPairsFormat = "pmdiff-pairs";

fs::path views_dir(const fs::path& d) { return d / "views"; }
fs::path lidar_dir(const fs::path& d) { return d / "lidar"; }

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw CommandError("missing " + what + ": " + p.string());
}

// Uniform double in [0,1) from the top 53 bits; stable across standard libraries.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Json file_entry(const fs::path& root, const fs::path& file) {
    Json e;
    e["path"] = fs::relative(file, root).generic_string();
    e["bytes"] = fs::file_size(file);
    e["sha256"] = io::sha256_file(file);
    return e;
}

Json file_ref(const fs::path& file) {
    Json e;
    e["path"] = file.generic_string();
    e["sha256"] = io::sha256_file(file);
    return e;
}

GeometrySource parse_geometry(const std::string& s) {
    if (s == "depth") return GeometrySource::Depth;
    if (s == "lidar") return GeometrySource::Lidar;
    throw CommandError("geometry must be depth or lidar, got '" + s + "'");
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw io::IoError("cannot create directory " + p.string());
}

Vec3 vec3_of(const std::vector<double>& v, std::size_t offset, const std::string& what) {
    if (v.size() < offset + 3) throw CommandError(what + ": expected at least " + std::to_string(offset + 3) + " values");
    return {v[offset], v[offset + 1], v[offset + 2]};
}

SavedModel load_checked_model(const fs::path& path) {
    require_file(path, "model checkpoint");
    return load_model(path);
}

}  // namespace

std::string view_stem(std::size_t index) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%03zu", index);
    return buf;
}

// ---------------------------------------------------------------------------
// synth / verify

Json run_synth(const SynthOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("synth: --out is required");
    if (opt.frames == 0) throw CommandError("synth: --frames must be >= 1");
    SceneSpec scene;
    if (opt.scene_config) {
        require_file(*opt.scene_config, "scene config");
        scene = io::scene_from_json(io::read_json(*opt.scene_config));
    } else {
        scene = random_scene(g.seed);
    }
    scene.validate();

    TrajectorySpec traj;
    traj.intrinsics = toy_intrinsics(opt.width, opt.height, opt.focal);
    traj.start = vec3_of(opt.start, 0, "synth --start");
    traj.heading = opt.heading_degrees * 3.141592653589793 / 180.0;
    traj.step = opt.step;
    traj.frames = opt.frames;
    traj.augmentation = Augmentation::parse(opt.augment, opt.augment_magnitude);
    const auto views = make_trajectory(traj);

    ensure_dir(views_dir(opt.out));
    if (opt.lidar) ensure_dir(lidar_dir(opt.out));
    std::vector<fs::path> files;
    const fs::path scene_path = opt.out / "scene.json";
    io::write_json(scene_path, io::scene_to_json(scene));
    files.push_back(scene_path);
    for (std::size_t f = 0; f < views.size(); ++f) {
        const std::string stem = view_stem(f);
        const auto r = render(scene, views[f]);
        const fs::path rgb = views_dir(opt.out) / (stem + ".ppm");
        const fs::path depth = views_dir(opt.out) / (stem + ".pfm");
        const fs::path cam = views_dir(opt.out) / (stem + ".json");
        io::write_ppm(rgb, r.rgb);
        io::write_pfm(depth, io::depth_to_image(r.depth));
        Json cj = io::camera_to_json(views[f]);
        cj["index"] = f;
        io::write_json(cam, cj);
        files.insert(files.end(), {rgb, depth, cam});
        if (opt.lidar) {
            const fs::path scan = lidar_dir(opt.out) / (stem + ".pmls");
            io::write_pmls(scan, simulate_lidar(scene, views[f].pose));
            files.push_back(scan);
        }
    }
    std::sort(files.begin(), files.end());

    Json m;
    m["format"] = kDatasetFormat;
    m["version"] = kDatasetVersion;
    m["seed"] = g.seed;
    m["frames"] = opt.frames;
    m["width"] = opt.width;
    m["height"] = opt.height;
    m["focal"] = opt.focal;
    m["step"] = opt.step;
    m["heading_degrees"] = opt.heading_degrees;
    m["start"] = opt.start;
    m["augment"] = opt.augment;
    m["augment_magnitude"] = opt.augment_magnitude;
    m["lidar"] = opt.lidar;
    m["scene_config"] = opt.scene_config ? Json(opt.scene_config->generic_string()) : Json(nullptr);
    Json list = Json::array();
    for (const auto& f : files) list.push_back(file_entry(opt.out, f));
    m["files"] = std::move(list);
    io::write_json(opt.out / "manifest.json", m);
    return m;
}

VerifyReport verify_dataset(const fs::path& dataset) {
    const fs::path mpath = dataset / "manifest.json";
    require_file(mpath, "manifest");
    const Json m = io::read_json(mpath);
    if (m.value("format", std::string()) != kDatasetFormat) throw CommandError("not a dataset manifest: " + mpath.string());
    if (m.value("version", 0) != kDatasetVersion)
        throw CommandError("unsupported dataset version " + m.at("version").dump());
    VerifyReport rep;
    for (const auto& e : m.at("files")) {
        const fs::path p = dataset / e.at("path").get<std::string>();
        ++rep.checked;
        if (!fs::is_regular_file(p)) {
            rep.problems.push_back("missing " + e.at("path").get<std::string>());
            continue;
        }
        if (io::sha256_file(p) != e.at("sha256").get<std::string>())
            rep.problems.push_back("hash mismatch " + e.at("path").get<std::string>());
    }
    return rep;
}

std::size_t dataset_frame_count(const fs::path& dataset) {
    const fs::path mpath = dataset / "manifest.json";
    require_file(mpath, "manifest");
    return io::read_json(mpath).at("frames").get<std::size_t>();
}

DatasetView load_view(const fs::path& dataset, std::size_t index, bool with_lidar) {
    const std::string stem = view_stem(index);
    const fs::path rgb = views_dir(dataset) / (stem + ".ppm");
    const fs::path depth = views_dir(dataset) / (stem + ".pfm");
    const fs::path cam = views_dir(dataset) / (stem + ".json");
    require_file(rgb, "view image");
    require_file(depth, "view depth");
    require_file(cam, "view camera");
    DatasetView v;
    v.rgb = io::read_ppm(rgb);
    v.depth = io::depth_from_image(io::read_pfm(depth));
    v.camera = io::camera_from_json(io::read_json(cam));
    v.files = {rgb, depth, cam};
    if (with_lidar) {
        const fs::path scan = lidar_dir(dataset) / (stem + ".pmls");
        require_file(scan, "LiDAR scan");
        v.lidar = io::read_pmls(scan);
        v.files.push_back(scan);
    }
    return v;
}

ScenePair load_pair(const fs::path& dataset, std::size_t reference, std::size_t target, GeometrySource source,
                    std::vector<fs::path>* files_read) {
    const bool lidar = source == GeometrySource::Lidar;
    DatasetView r = load_view(dataset, reference, lidar);
    DatasetView t = load_view(dataset, target, lidar);
    ScenePair pair;
    pair.reference_rgb = std::move(r.rgb);
    pair.target_rgb = std::move(t.rgb);
    pair.reference_depth = std::move(r.depth);
    pair.target_depth = std::move(t.depth);
    pair.reference_view = r.camera;
    pair.target_view = t.camera;
    pair.reference_lidar = std::move(r.lidar);
    pair.target_lidar = std::move(t.lidar);
    pair.tag = view_stem(reference) + "->" + view_stem(target);
    build_pair_geometry(pair, source);
    if (files_read) {
        files_read->insert(files_read->end(), r.files.begin(), r.files.end());
        files_read->insert(files_read->end(), t.files.begin(), t.files.end());
    }
    return pair;
}

// ---------------------------------------------------------------------------
// pairs

Json run_pairs(const PairsOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("pairs: --out is required");
    if (!(opt.overlap_threshold >= 0.0 && opt.overlap_threshold <= 1.0))
        throw CommandError("pairs: --overlap-threshold must lie in [0,1]");
    if (!(opt.lidar_probability >= 0.0 && opt.lidar_probability <= 1.0))
        throw CommandError("pairs: --lidar-prob must lie in [0,1]");
    if (!(opt.tolerance > 0.0)) throw CommandError("pairs: --tolerance must be positive");
    const std::size_t n = dataset_frame_count(opt.dataset);

    std::vector<PointMap> own;  // each view's dense map in its own frame
    std::vector<CameraView> cams;
    bool has_lidar = true;
    for (std::size_t i = 0; i < n; ++i) {
        const DatasetView v = load_view(opt.dataset, i, false);
        own.push_back(pointmap_from_depth(v.camera.intrinsics, v.depth, kReferenceFrame));
        cams.push_back(v.camera);
        has_lidar = has_lidar && fs::is_regular_file(lidar_dir(opt.dataset) / (view_stem(i) + ".pmls"));
    }
    if (opt.lidar_probability > 0.0 && !has_lidar)
        throw CommandError("pairs: --lidar-prob > 0 needs LiDAR scans in the dataset");

    std::mt19937_64 rng(g.seed);
    Json list = Json::array();
    std::size_t candidates = 0, lidar_pairs = 0;
    for (std::size_t t = 0; t < n; ++t) {
        PointMap target = own[t];
        target.frame = kTargetFrame;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == t && !opt.include_self) continue;
            const std::size_t gap = r > t ? r - t : t - r;
            if (opt.max_gap > 0 && gap > opt.max_gap) continue;
            ++candidates;
            const Rigid rt = relative_pose(cams[r].pose, cams[t].pose);
            const PointMap ref_in_t = transform_pointmap(own[r], rt, kReferenceFrame, kTargetFrame);
            const double ratio = overlap_ratio(ref_in_t, target, cams[t].intrinsics, opt.tolerance);
            // Nothing exceeds a ratio of 1, so that threshold keeps full overlaps.
            const bool keep = opt.overlap_threshold >= 1.0 ? ratio >= 1.0 : ratio > opt.overlap_threshold;
            if (!keep) continue;
            const bool lidar = unit_draw(rng) < opt.lidar_probability;
            lidar_pairs += lidar;
            Json e;
            e["reference"] = r;
            e["target"] = t;
            e["overlap"] = ratio;
            e["geometry"] = lidar ? "lidar" : "depth";
            list.push_back(std::move(e));
        }
    }

    Json j;
    j["format"] = kPairsFormat;
    j["version"] = 1;
    j["dataset"] = fs::absolute(opt.dataset).lexically_normal().generic_string();
    j["dataset_manifest_sha256"] = io::sha256_file(opt.dataset / "manifest.json");
    j["seed"] = g.seed;
    j["overlap_threshold"] = opt.overlap_threshold;
    j["tolerance"] = opt.tolerance;
    j["lidar_probability"] = opt.lidar_probability;
    j["max_gap"] = opt.max_gap;
    j["include_self"] = opt.include_self;
    j["candidates"] = candidates;
    j["kept"] = list.size();
    j["lidar_pairs"] = lidar_pairs;
    j["pairs"] = std::move(list);
    io::write_json(opt.out, j);
    return j;
}

std::vector<PairEntry> read_pair_list(const fs::path& path) {
    require_file(path, "pair list");
    const Json j = io::read_json(path);
    if (j.value("format", std::string()) != kPairsFormat) throw CommandError("not a pair list: " + path.string());
    const fs::path dataset = j.at("dataset").get<std::string>();
    std::vector<PairEntry> out;
    for (const auto& e : j.at("pairs")) {
        PairEntry p;
        p.dataset = dataset;
        p.reference = e.at("reference").get<std::size_t>();
        p.target = e.at("target").get<std::size_t>();
        p.geometry = parse_geometry(e.at("geometry").get<std::string>());
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// train

Json run_train(const TrainOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("train: --out is required");
    if (opt.pairs.empty()) throw CommandError("train: at least one --pairs file is required");
    if (opt.widths.size() != 3) throw CommandError("train: --widths takes three values");

    std::vector<TrainSample> data;
    std::size_t skipped = 0, lidar = 0;
    Json sources = Json::array();
    for (const auto& list : opt.pairs) {
        sources.push_back(file_ref(list));
        for (const auto& p : read_pair_list(list)) {
            try {
                data.push_back(make_train_sample(load_pair(p.dataset, p.reference, p.target, p.geometry)));
                lidar += p.geometry == GeometrySource::Lidar;
            } catch (const GeometryUnavailableError& e) {
                ++skipped;
                std::cerr << "train: skipping pair " << p.reference << "->" << p.target << ": " << e.what() << '\n';
            }
        }
    }
    if (data.empty()) throw CommandError("train: no usable pairs");

    ModelConfig mc;
    mc.image_height = data.front().z_target.dim(2);
    mc.image_width = data.front().z_target.dim(3);
    std::copy(opt.widths.begin(), opt.widths.end(), mc.widths.begin());
    mc.time_dim = opt.time_dim;
    mc.embed_dim = opt.embed_dim;
    mc.seed = g.seed;
    for (const auto& s : data) {
        if (s.z_target.dim(2) != mc.image_height || s.z_target.dim(3) != mc.image_width)
            throw CommandError("train: all pairs must share one image size");
    }

    ModelParams params = build_model(mc);
    DiffusionSchedule schedule(opt.diffusion_steps);
    TrainerConfig tc;
    tc.pretrain_steps = opt.pretrain_steps;
    tc.conditional_steps = opt.conditional_steps;
    tc.batch = opt.batch;
    tc.pretrain_lr = opt.pretrain_lr;
    tc.conditional_lr = opt.conditional_lr;
    tc.seed = g.seed;
    tc.log_every = opt.log_every;
    tc.probe_size = std::min(opt.probe_size, data.size());
    tc.validate();

    ensure_dir(opt.out);
    TrainLog log(opt.out / "train_log.jsonl");
    const auto on_log = [&](const TrainLogRecord& r) {
        log.write(r);
        std::cerr << "  [" << r.phase << "] step " << r.step << " loss " << r.loss << '\n';
    };

    Json summary;
    summary["command"] = "train";
    summary["seed"] = g.seed;
    summary["pairs"] = std::move(sources);
    summary["samples"] = data.size();
    summary["lidar_samples"] = lidar;
    summary["skipped"] = skipped;
    summary["model"] = Json::parse(mc.to_json());
    summary["schedule"] = Json::parse(schedule_to_json(schedule));

    if (opt.base) {
        const SavedModel src = load_checked_model(*opt.base);
        if (src.params.config.image_width != mc.image_width || src.params.config.image_height != mc.image_height ||
            src.params.config.widths != mc.widths || src.params.config.time_dim != mc.time_dim ||
            src.params.config.embed_dim != mc.embed_dim)
            throw CommandError("train: --base checkpoint has a different model configuration");
        for (const auto& [name, t] : src.params.base()) params.tensors[name] = t.clone();
        summary["base_checkpoint"] = file_ref(*opt.base);
    } else {
        const PhaseResult pre = pretrain_base(params, data, schedule, tc, on_log);
        summary["pretrain"] = {{"steps", tc.pretrain_steps},
                               {"probe_loss_initial", pre.probe_loss_initial},
                               {"probe_loss_final", pre.probe_loss_final}};
        save_model(opt.out / "base.pmdk", params, schedule, R"({"phase":"pretrain"})");
    }
    const std::string base_hash = params.hash("base.");
    const PhaseResult cond = train_conditional(params, data, schedule, tc, on_log);
    const double drop = cond.probe_loss_initial > 0.0 ? 1.0 - cond.probe_loss_final / cond.probe_loss_initial : 0.0;
    summary["conditional"] = {{"steps", tc.conditional_steps},
                              {"probe_loss_initial", cond.probe_loss_initial},
                              {"probe_loss_final", cond.probe_loss_final},
                              {"relative_drop", drop}};
    summary["base_hash"] = base_hash;
    summary["base_unchanged"] = params.hash("base.") == base_hash;
    save_model(opt.out / "model.pmdk", params, schedule, R"({"phase":"conditional"})");
    summary["checkpoint"] = file_ref(opt.out / "model.pmdk");
    io::write_json(opt.out / "train.json", summary);
    return summary;
}

// ---------------------------------------------------------------------------
// sample / refine

Json run_sample(const SampleOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("sample: --out is required");
    PairEntry entry;
    if (opt.pairs) {
        const auto list = read_pair_list(*opt.pairs);
        if (opt.index >= list.size())
            throw CommandError("sample: --index " + std::to_string(opt.index) + " out of range for " +
                               std::to_string(list.size()) + " pairs");
        entry = list[opt.index];
    } else if (opt.dataset) {
        entry.dataset = *opt.dataset;
        entry.reference = opt.reference;
        entry.target = opt.target;
        entry.geometry = parse_geometry(opt.geometry);
    } else {
        throw CommandError("sample: give --pairs with --index, or --dataset with --reference/--target");
    }
    const SavedModel model = load_checked_model(opt.model);
    const DiffusionSchedule schedule = schedule_from_json(model.schedule_json);
    if (opt.steps == 0 || opt.steps > schedule.steps())
        throw CommandError("sample: --steps must lie in 1.." + std::to_string(schedule.steps()));

    std::vector<fs::path> inputs;
    const ScenePair pair = load_pair(entry.dataset, entry.reference, entry.target, entry.geometry, &inputs);
    const TrainSample sample = make_train_sample(pair);
    const auto& mc = model.params.config;
    if (sample.z_target.dim(2) != mc.image_height || sample.z_target.dim(3) != mc.image_width)
        throw CommandError("sample: views do not match the model image size");
    const auto out = sample_targets(model.params, {sample}, {0}, schedule, opt.steps, g.seed);
    io::write_ppm(opt.out, tensor_to_image(out.front()));

    // The target image itself is not a condition input.
    const fs::path target_rgb = views_dir(entry.dataset) / (view_stem(entry.target) + ".ppm");
    Json cond = Json::array();
    for (const auto& f : inputs) {
        if (f != target_rgb) cond.push_back(file_ref(f));
    }
    Json prov;
    prov["command"] = "sample";
    prov["seed"] = g.seed;
    prov["steps"] = opt.steps;
    prov["s"] = nullptr;
    prov["model"] = file_ref(opt.model);
    prov["reference"] = entry.reference;
    prov["target"] = entry.target;
    prov["geometry"] = to_string(entry.geometry);
    prov["conditions"] = std::move(cond);
    prov["output"] = file_ref(opt.out);
    io::write_json(fs::path(opt.out.string() + ".json"), prov);
    return prov;
}

Json run_refine(const RefineOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("refine: --out is required");
    require_file(opt.input, "input image");
    if (!(opt.s >= 0.0 && opt.s <= 1.0)) throw CommandError("refine: --s must lie in [0,1]");
    const SavedModel model = load_checked_model(opt.model);
    const DiffusionSchedule schedule = schedule_from_json(model.schedule_json);
    const Image input = io::read_ppm(opt.input);
    const auto& mc = model.params.config;
    if (input.width != mc.image_width || input.height != mc.image_height)
        throw CommandError("refine: input is " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                           " but the model expects " + std::to_string(mc.image_width) + "x" +
                           std::to_string(mc.image_height));
    const Tensor refined =
        refine_render(base_eps_fn(model.params), image_to_tensor(input), opt.s, schedule, opt.steps, g.seed);
    io::write_ppm(opt.out, tensor_to_image(refined));

    Json prov;
    prov["command"] = "refine";
    prov["seed"] = g.seed;
    prov["steps"] = opt.steps;
    prov["s"] = opt.s;
    prov["model"] = file_ref(opt.model);
    prov["conditions"] = Json::array({file_ref(opt.input)});
    prov["output"] = file_ref(opt.out);
    io::write_json(fs::path(opt.out.string() + ".json"), prov);
    return prov;
}

// ---------------------------------------------------------------------------
// edit / eval

Json run_edit(const EditOptions& opt, const GlobalOptions& g) {
    if (opt.out.empty()) throw CommandError("edit: --out is required");
    if (opt.box.size() != 6 && opt.box.size() != 7) throw CommandError("edit: --box takes cx cy cz hx hy hz [yaw]");
    if (opt.translate.size() != 3) throw CommandError("edit: --translate takes three values");
    EditMode mode;
    if (opt.mode == "translate") mode = EditMode::Translate;
    else if (opt.mode == "duplicate") mode = EditMode::Duplicate;
    else throw CommandError("edit: --mode must be translate or duplicate");

    const DatasetView v = load_view(opt.dataset, opt.view, false);
    const PointMap map = pointmap_from_depth(v.camera.intrinsics, v.depth, kReferenceFrame);
    Bbox3 box;
    box.center = vec3_of(opt.box, 0, "edit --box");
    box.half_extents = vec3_of(opt.box, 3, "edit --box");
    if (opt.box.size() == 7) box.yaw = opt.box[6];
    box.validate();
    // Rotation about the box centre followed by the translation.
    const Rigid spin = Rigid::translation(box.center) * Rigid::rotation_y(opt.yaw_degrees * 3.141592653589793 / 180.0) *
                       Rigid::translation(-box.center);
    const Rigid transform = Rigid::translation(vec3_of(opt.translate, 0, "edit --translate")) * spin;
    const EditResult res = edit_pointmap(map, v.camera, box, transform, mode);

    ensure_dir(opt.out);
    io::write_pfm(opt.out / "pointmap.pfm", io::pointmap_to_image(map));
    io::write_pfm(opt.out / "edited.pfm", io::pointmap_to_image(res.map));
    io::write_pfm(opt.out / "edited_mask.pfm", io::mask_to_image(res.map.mask()));
    for (const auto& w : res.warnings) std::cerr << "edit: warning: " << w << '\n';

    Json prov;
    prov["command"] = "edit";
    prov["seed"] = g.seed;
    prov["view"] = opt.view;
    prov["mode"] = opt.mode;
    prov["box"] = opt.box;
    prov["translate"] = opt.translate;
    prov["yaw_degrees"] = opt.yaw_degrees;
    prov["selected"] = res.selected;
    prov["valid_before"] = map.valid_count();
    prov["valid_after"] = res.map.valid_count();
    prov["warnings"] = res.warnings;
    Json cond = Json::array();
    for (const auto& f : v.files) cond.push_back(file_ref(f));
    prov["conditions"] = std::move(cond);
    prov["outputs"] = Json::array({file_ref(opt.out / "pointmap.pfm"), file_ref(opt.out / "edited.pfm"),
                                   file_ref(opt.out / "edited_mask.pfm")});
    io::write_json(opt.out / "edit.json", prov);
    return prov;
}

Json run_eval(const EvalOptions& opt, const GlobalOptions&) {
    require_file(opt.pred, "prediction image");
    require_file(opt.gt, "ground-truth image");
    if (opt.pred_depth.has_value() != opt.gt_depth.has_value())
        throw CommandError("eval: --pred-depth and --gt-depth go together");
    const Image pred = io::read_ppm(opt.pred);
    const Image gt = io::read_ppm(opt.gt);
    if (!pred.same_shape(gt))
        throw CommandError("eval: image sizes differ (" + std::to_string(pred.width) + "x" +
                           std::to_string(pred.height) + " vs " + std::to_string(gt.width) + "x" +
                           std::to_string(gt.height) + ")");
    std::optional<DepthMap> pd, gd;
    if (opt.pred_depth) {
        require_file(*opt.pred_depth, "predicted depth");
        require_file(*opt.gt_depth, "ground-truth depth");
        pd = io::depth_from_image(io::read_pfm(*opt.pred_depth));
        gd = io::depth_from_image(io::read_pfm(*opt.gt_depth));
        if (pd->width != gt.width || pd->height != gt.height || gd->width != gt.width || gd->height != gt.height)
            throw CommandError("eval: depth maps must match the image size");
    }
    const EvalReport rep = evaluate_images(pred, gt, pd ? &*pd : nullptr, gd ? &*gd : nullptr);
    Json j = Json::parse(rep.to_json());
    Json inputs = Json::array({file_ref(opt.pred), file_ref(opt.gt)});
    if (opt.pred_depth) {
        inputs.push_back(file_ref(*opt.pred_depth));
        inputs.push_back(file_ref(*opt.gt_depth));
    }
    j["inputs"] = std::move(inputs);
    if (opt.out) io::write_json(*opt.out, j);
    return j;
}

}  // namespace pmdiff::cli
