// pmdiff command line driver. Every flag may also come from a JSON file given
// with --config: top-level keys set global flags and an object named after a
// subcommand sets that subcommand's flags. Flags on the command line win.

#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "pmdiff/trainer.hpp"

namespace {

using pmdiff::cli::Json;

class JsonConfig : public CLI::Config {
   public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        return dump(app, default_also).dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError(std::string("--config: invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("--config: top level must be an object");
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

   private:
    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    }

    static void flatten(const nlohmann::json& j, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto next = parents;
                next.push_back(key);
                flatten(value, next, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }

    static nlohmann::json dump(const CLI::App* app, bool default_also) {
        nlohmann::json j = nlohmann::json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (!opt->get_configurable() || opt->get_single_name().empty()) continue;
            const auto values = opt->results();
            if (!values.empty()) {
                if (opt->get_expected_max() > 1) j[opt->get_single_name()] = values;
                else j[opt->get_single_name()] = values.front();
            } else if (default_also && !opt->get_default_str().empty()) {
                j[opt->get_single_name()] = opt->get_default_str();
            }
        }
        for (const CLI::App* sub : app->get_subcommands({})) {
            if (sub->parsed()) j[sub->get_name()] = dump(sub, default_also);
        }
        return j;
    }
};

void print(const Json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    using namespace pmdiff::cli;
    CLI::App app{"pmdiff: point-map conditioned micro-diffusion toolkit"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file supplying flag values");
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Compute threads")->capture_default_str()->check(CLI::Range(1, 256));

    SynthOptions synth;
    auto* c_synth = app.add_subcommand("synth", "Render a dataset from a scene along a trajectory");
    c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
    c_synth->add_option("--scene-config", synth.scene_config, "Scene JSON (random scene from --seed when absent)");
    c_synth->add_option("--frames", synth.frames)->capture_default_str();
    c_synth->add_option("--width", synth.width)->capture_default_str();
    c_synth->add_option("--height", synth.height)->capture_default_str();
    c_synth->add_option("--focal", synth.focal)->capture_default_str();
    c_synth->add_option("--step", synth.step, "Metres between frames")->capture_default_str();
    c_synth->add_option("--heading", synth.heading_degrees, "Trajectory yaw in degrees")->capture_default_str();
    c_synth->add_option("--start", synth.start, "Start position x y z")->expected(3)->delimiter(',');
    c_synth->add_option("--augment", synth.augment, "none|rotate|lateral|elevate")->capture_default_str();
    c_synth->add_option("--augment-magnitude", synth.augment_magnitude)->capture_default_str();
    c_synth->add_flag("--lidar,!--no-lidar", synth.lidar, "Write LiDAR scans")->capture_default_str();

    std::filesystem::path verify_dir;
    auto* c_verify = app.add_subcommand("verify", "Recompute dataset hashes against the manifest");
    c_verify->add_option("--dataset", verify_dir)->required();

    PairsOptions pairs;
    auto* c_pairs = app.add_subcommand("pairs", "Select overlapping view pairs from a dataset");
    c_pairs->add_option("--dataset", pairs.dataset)->required();
    c_pairs->add_option("--out", pairs.out, "Pair list JSON")->required();
    c_pairs->add_option("--overlap-threshold", pairs.overlap_threshold)->capture_default_str();
    c_pairs->add_option("--tolerance", pairs.tolerance, "Visibility tolerance in metres")->capture_default_str();
    c_pairs->add_option("--lidar-prob", pairs.lidar_probability, "Share of pairs using LiDAR geometry")
        ->capture_default_str();
    c_pairs->add_option("--max-gap", pairs.max_gap, "Largest frame distance (0 = any)")->capture_default_str();
    c_pairs->add_flag("--include-self", pairs.include_self, "Also consider each view paired with itself");

    TrainOptions train;
    auto* c_train = app.add_subcommand("train", "Pretrain the base denoiser and train the conditional branches");
    c_train->add_option("--pairs", train.pairs, "Pair list JSON (repeatable)")->required();
    c_train->add_option("--out", train.out, "Output directory")->required();
    c_train->add_option("--base", train.base, "Checkpoint providing pretrained base weights");
    c_train->add_option("--pretrain-steps", train.pretrain_steps)->capture_default_str();
    c_train->add_option("--conditional-steps", train.conditional_steps)->capture_default_str();
    c_train->add_option("--batch", train.batch)->capture_default_str();
    c_train->add_option("--pretrain-lr", train.pretrain_lr)->capture_default_str();
    c_train->add_option("--conditional-lr", train.conditional_lr)->capture_default_str();
    c_train->add_option("--log-every", train.log_every)->capture_default_str();
    c_train->add_option("--probe-size", train.probe_size)->capture_default_str();
    c_train->add_option("--widths", train.widths, "Channel widths per level")->expected(3)->delimiter(',');
    c_train->add_option("--time-dim", train.time_dim)->capture_default_str();
    c_train->add_option("--embed-dim", train.embed_dim)->capture_default_str();
    c_train->add_option("--diffusion-steps", train.diffusion_steps)->capture_default_str();

    SampleOptions sample;
    auto* c_sample = app.add_subcommand("sample", "Generate a target view from a reference and point maps");
    c_sample->add_option("--model", sample.model)->required();
    c_sample->add_option("--out", sample.out, "Output PPM")->required();
    c_sample->add_option("--pairs", sample.pairs, "Pair list JSON");
    c_sample->add_option("--index", sample.index, "Entry of the pair list")->capture_default_str();
    c_sample->add_option("--dataset", sample.dataset, "Dataset directory (instead of --pairs)");
    c_sample->add_option("--reference", sample.reference)->capture_default_str();
    c_sample->add_option("--target", sample.target)->capture_default_str();
    c_sample->add_option("--geometry", sample.geometry, "depth|lidar")->capture_default_str();
    c_sample->add_option("--steps", sample.steps, "DDIM steps")->capture_default_str();

    RefineOptions refine;
    auto* c_refine = app.add_subcommand("refine", "Re-noise a render to scale s and denoise it with the base model");
    c_refine->add_option("--model", refine.model)->required();
    c_refine->add_option("--input", refine.input, "Input PPM")->required();
    c_refine->add_option("--out", refine.out, "Output PPM")->required();
    c_refine->add_option("--s", refine.s, "Noise scale in [0,1]")->capture_default_str();
    c_refine->add_option("--steps", refine.steps, "DDIM steps")->capture_default_str();

    EditOptions edit;
    auto* c_edit = app.add_subcommand("edit", "Move or copy a boxed region of a view's point map");
    c_edit->add_option("--dataset", edit.dataset)->required();
    c_edit->add_option("--view", edit.view)->capture_default_str();
    c_edit->add_option("--out", edit.out, "Output directory")->required();
    c_edit->add_option("--box", edit.box, "World box cx,cy,cz,hx,hy,hz[,yaw]")->required()->expected(6, 7)->delimiter(',');
    c_edit->add_option("--translate", edit.translate, "World translation x,y,z")
        ->required()
        ->expected(3)
        ->delimiter(',');
    c_edit->add_option("--yaw", edit.yaw_degrees, "Rotation about the box centre in degrees")->capture_default_str();
    c_edit->add_option("--mode", edit.mode, "translate|duplicate")->capture_default_str();

    EvalOptions eval;
    auto* c_eval = app.add_subcommand("eval", "Image and depth metrics of a prediction against ground truth");
    c_eval->add_option("--pred", eval.pred, "Predicted PPM")->required();
    c_eval->add_option("--gt", eval.gt, "Ground-truth PPM")->required();
    c_eval->add_option("--pred-depth", eval.pred_depth, "Predicted depth PFM");
    c_eval->add_option("--gt-depth", eval.gt_depth, "Ground-truth depth PFM");
    c_eval->add_option("--out", eval.out, "Report JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        pmdiff::set_compute_threads(g.threads);
        if (c_synth->parsed()) {
            const Json m = run_synth(synth, g);
            std::cout << "wrote " << m.at("files").size() << " files to " << synth.out.string() << '\n';
        } else if (c_verify->parsed()) {
            const VerifyReport rep = verify_dataset(verify_dir);
            for (const auto& p : rep.problems) std::cout << p << '\n';
            std::cout << (rep.ok() ? "OK" : "FAILED") << ": " << rep.checked << " files checked\n";
            return rep.ok() ? 0 : 1;
        } else if (c_pairs->parsed()) {
            const Json j = run_pairs(pairs, g);
            std::cout << "kept " << j.at("kept") << " of " << j.at("candidates") << " pairs (" << j.at("lidar_pairs")
                      << " lidar)\n";
        } else if (c_train->parsed()) {
            print(run_train(train, g));
        } else if (c_sample->parsed()) {
            print(run_sample(sample, g));
        } else if (c_refine->parsed()) {
            print(run_refine(refine, g));
        } else if (c_edit->parsed()) {
            print(run_edit(edit, g));
        } else if (c_eval->parsed()) {
            print(run_eval(eval, g));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
