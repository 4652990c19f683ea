// wsd: weight-space diffusion over animatable gaussian-splat avatars.
// Pipeline: gen-data -> fit/fit-all -> pack -> train-diffusion -> sample ->
// render/eval. Every command prints a one-line JSON summary on success.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wsd/config.hpp"
#include "wsd/diffusion.hpp"
#include "wsd/fit.hpp"
#include "wsd/image.hpp"
#include "wsd/metrics.hpp"
#include "wsd/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigArgs {
    std::string preset = "desk";
    std::string config_path;

    wsd::RunConfig resolve() const {
        if (!config_path.empty()) return wsd::load_run_config(config_path);
        return wsd::make_preset(preset);
    }
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--preset", args.preset, "Config preset: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", args.config_path, "JSON config file (overrides the preset)");
}

void print_summary(const json& j) { std::cout << j.dump() << std::endl; }

// minimal '*' glob over one directory component
std::vector<std::string> expand_glob(const std::string& pattern) {
    fs::path p(pattern);
    fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
    std::string name = p.filename().string();
    auto match = [&](const std::string& candidate) {
        size_t star = name.find('*');
        if (star == std::string::npos) return candidate == name;
        std::string prefix = name.substr(0, star);
        std::string suffix = name.substr(star + 1);
        return candidate.size() >= prefix.size() + suffix.size() &&
               candidate.compare(0, prefix.size(), prefix) == 0 &&
               candidate.compare(candidate.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && match(entry.path().filename().string()))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weight-space diffusion avatar pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-view capture dataset");
    ConfigArgs gen_cfg;
    int gen_identities = -1, gen_frames = -1, gen_cameras = -1, gen_res = -1;
    uint64_t gen_seed = 0;
    bool gen_seed_set = false;
    std::string gen_out;
    add_config_flags(gen, gen_cfg);
    gen->add_option("--identities", gen_identities, "Identity count");
    gen->add_option("--frames", gen_frames, "Frames per identity");
    gen->add_option("--cameras", gen_cameras, "Camera count");
    gen->add_option("--res", gen_res, "Image resolution");
    gen->add_option("--seed", gen_seed, "Dataset seed")->each([&](const std::string&) {
        gen_seed_set = true;
    });
    gen->add_option("--out", gen_out, "Output directory")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "Fit one identity's avatar network");
    ConfigArgs fit_cfg;
    std::string fit_data, fit_out;
    int fit_identity = 0;
    add_config_flags(fit, fit_cfg);
    fit->add_option("--data", fit_data, "Dataset directory (with manifest.json)")->required();
    fit->add_option("--identity", fit_identity, "Identity index");
    fit->add_option("--out", fit_out, "Output .wsdw checkpoint")->required();

    // fit-all
    auto* fit_all = app.add_subcommand("fit-all", "Fit every identity in the dataset");
    ConfigArgs fit_all_cfg;
    std::string fit_all_data, fit_all_out;
    add_config_flags(fit_all, fit_all_cfg);
    fit_all->add_option("--data", fit_all_data, "Dataset directory")->required();
    fit_all->add_option("--out-dir", fit_all_out, "Directory for .wsdw checkpoints")->required();

    // pack
    auto* pack = app.add_subcommand("pack", "Pack fitted records plus standardizer into .wsds");
    std::string pack_glob, pack_out;
    pack->add_option("--ckpts", pack_glob, "Glob of .wsdw checkpoints")->required();
    pack->add_option("--out", pack_out, "Output .wsds pack")->required();

    // train-diffusion
    auto* train = app.add_subcommand("train-diffusion", "Train the weight-space denoiser");
    ConfigArgs train_cfg;
    std::string train_pack, train_out;
    add_config_flags(train, train_cfg);
    train->add_option("--pack", train_pack, "Input .wsds pack")->required();
    train->add_option("--out", train_out, "Output .wsdm model")->required();

    // sample
    auto* sample = app.add_subcommand("sample", "Sample new weight records via DDIM");
    std::string sample_model, sample_out;
    int sample_count = 8, sample_steps = -1;
    double sample_eta = -1.0;
    uint64_t sample_seed = 0;
    ConfigArgs sample_cfg;
    add_config_flags(sample, sample_cfg);
    sample->add_option("--model", sample_model, "Trained .wsdm model")->required();
    sample->add_option("--count", sample_count, "Number of samples");
    sample->add_option("--ddim-steps", sample_steps, "DDIM step count");
    sample->add_option("--eta", sample_eta, "DDIM eta in [0,1]");
    sample->add_option("--seed", sample_seed, "Sampling seed");
    sample->add_option("--out", sample_out, "Output directory")->required();

    // render
    auto* render = app.add_subcommand("render", "Render a weight record for a pose and camera");
    ConfigArgs render_cfg;
    std::string render_weights, render_pose, render_camera, render_out;
    add_config_flags(render, render_cfg);
    render->add_option("--weights", render_weights, "Avatar .wsdw record")->required();
    render->add_option("--pose", render_pose, "Pose JSON")->required();
    render->add_option("--camera", render_camera, "Camera JSON")->required();
    render->add_option("--out", render_out, "Output PNG")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Compare generated records against a reference set");
    ConfigArgs eval_cfg;
    std::string eval_gen, eval_ref, eval_out;
    uint64_t eval_seed = 0;
    add_config_flags(eval, eval_cfg);
    eval->add_option("--generated", eval_gen, "Directory of generated .wsdw records")->required();
    eval->add_option("--reference", eval_ref, "Directory of reference .wsdw records")->required();
    eval->add_option("--seed", eval_seed, "Report seed field");
    eval->add_option("--out", eval_out, "Output report JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help is success, everything else is usage
    }

    try {
        if (gen->parsed()) {
            wsd::RunConfig run = gen_cfg.resolve();
            wsd::DatasetConfig cfg = run.dataset;
            if (gen_identities > 0) cfg.identities = gen_identities;
            if (gen_frames > 0) cfg.frames = gen_frames;
            if (gen_cameras > 0) cfg.cameras = gen_cameras;
            if (gen_res > 0) cfg.resolution = gen_res;
            if (gen_seed_set) cfg.seed = gen_seed;
            wsd::generate_dataset(cfg, gen_out);
            print_summary({{"command", "gen-data"},
                           {"status", "ok"},
                           {"identities", cfg.identities},
                           {"frames", cfg.frames},
                           {"cameras", cfg.cameras},
                           {"images", cfg.identities * cfg.frames * cfg.cameras},
                           {"out", gen_out}});
        } else if (fit->parsed()) {
            wsd::RunConfig run = fit_cfg.resolve();
            wsd::DatasetManifest manifest =
                wsd::load_manifest((fs::path(fit_data) / "manifest.json").string());
            wsd::FitResult result = wsd::fit_identity(manifest, fit_identity, run.fit);
            wsd::save_record(result.weights, fit_out);
            wsd::write_loss_csv(result.log, fit_out + ".loss.csv");
            print_summary({{"command", "fit"},
                           {"status", "ok"},
                           {"identity", fit_identity},
                           {"iterations", run.fit.iterations},
                           {"final_loss", result.log.empty() ? 0.0 : result.log.back().total},
                           {"out", fit_out}});
        } else if (fit_all->parsed()) {
            wsd::RunConfig run = fit_all_cfg.resolve();
            wsd::DatasetManifest manifest =
                wsd::load_manifest((fs::path(fit_all_data) / "manifest.json").string());
            fs::create_directories(fit_all_out);
            json outs = json::array();
            for (int i = 0; i < static_cast<int>(manifest.identities.size()); ++i) {
                wsd::FitResult result = wsd::fit_identity(manifest, i, run.fit);
                std::string path =
                    (fs::path(fit_all_out) / ("identity_" + std::to_string(i) + ".wsdw")).string();
                wsd::save_record(result.weights, path);
                wsd::write_loss_csv(result.log, path + ".loss.csv");
                outs.push_back(path);
            }
            print_summary({{"command", "fit-all"},
                           {"status", "ok"},
                           {"identities", manifest.identities.size()},
                           {"checkpoints", outs}});
        } else if (pack->parsed()) {
            std::vector<std::string> paths = expand_glob(pack_glob);
            if (paths.empty()) throw wsd::Error("pack: no files match " + pack_glob);
            std::vector<wsd::WeightRecord> records;
            for (const auto& p : paths) records.push_back(wsd::load_record(p));
            wsd::Standardizer st = wsd::fit_standardizer(records);
            wsd::save_pack(records, st, pack_out);
            print_summary({{"command", "pack"},
                           {"status", "ok"},
                           {"records", records.size()},
                           {"scalars_per_record", records[0].scalar_count()},
                           {"out", pack_out}});
        } else if (train->parsed()) {
            wsd::RunConfig run = train_cfg.resolve();
            wsd::WeightPack wpack = wsd::load_pack(train_pack);
            wsd::DiffusionTrainResult result = wsd::train_diffusion(wpack.records, run.diffusion);
            wsd::save_model(result.model, train_out);
            wsd::write_epoch_csv(result.log, train_out + ".loss.csv");
            print_summary({{"command", "train-diffusion"},
                           {"status", "ok"},
                           {"records", wpack.records.size()},
                           {"epochs", run.diffusion.epochs},
                           {"final_loss", result.log.empty() ? 0.0 : result.log.back().loss},
                           {"out", train_out}});
        } else if (sample->parsed()) {
            wsd::RunConfig run = sample_cfg.resolve();
            int steps = sample_steps > 0 ? sample_steps : run.ddim_steps;
            double eta = sample_eta >= 0.0 ? sample_eta : run.ddim_eta;
            wsd::DiffusionModel model = wsd::load_model(sample_model);
            fs::create_directories(sample_out);
            for (int k = 0; k < sample_count; ++k) {
                wsd::WeightRecord rec =
                    wsd::ddim_sample(model, steps, eta, sample_seed + static_cast<uint64_t>(k));
                wsd::save_record(
                    rec, (fs::path(sample_out) / ("sample_" + std::to_string(k) + ".wsdw")).string());
            }
            print_summary({{"command", "sample"},
                           {"status", "ok"},
                           {"count", sample_count},
                           {"ddim_steps", steps},
                           {"eta", eta},
                           {"seed", sample_seed},
                           {"out", sample_out}});
        } else if (render->parsed()) {
            wsd::RunConfig run = render_cfg.resolve();
            wsd::WeightRecord weights = wsd::load_record(render_weights);
            wsd::Pose pose = wsd::load_pose(render_pose);
            wsd::Camera cam = wsd::load_camera(render_camera);
            wsd::Template tpl =
                wsd::build_template(run.dataset.joint_count, run.dataset.radial_segments,
                                    run.dataset.height_segments, run.dataset.tube_radius);
            wsd::UVAnchorMap anchors = wsd::anchor_map(tpl, run.fit.unet.uv_resolution);
            wsd::RenderOutput out = wsd::render_avatar(weights, run.fit.unet, tpl, anchors, pose,
                                                       cam, run.dataset.background);
            if (!out.rgb.all_finite()) throw wsd::Error("render: non-finite pixels");
            wsd::save_png(out.rgb, render_out);
            print_summary({{"command", "render"},
                           {"status", "ok"},
                           {"width", cam.width},
                           {"height", cam.height},
                           {"out", render_out}});
        } else if (eval->parsed()) {
            wsd::RunConfig run = eval_cfg.resolve();
            wsd::ProbeSet probes = wsd::make_probes(run.probes);
            wsd::MetricReport report = wsd::evaluate(eval_gen, eval_ref, probes, eval_seed);
            wsd::write_report(report, eval_out);
            print_summary({{"command", "eval"},
                           {"status", "ok"},
                           {"mmd_psnr", report.mmd_psnr},
                           {"mmd_proxy", report.mmd_proxy},
                           {"cov_percent", report.cov_percent},
                           {"one_nna_percent", report.one_nna_percent},
                           {"n_generated", report.n_generated},
                           {"n_reference", report.n_reference},
                           {"out", eval_out}});
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cout << json{{"status", "error"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
    return 0;
}
