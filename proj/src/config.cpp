#include "wsd/config.hpp"

#include <fstream>

#include <json.hpp>

namespace wsd {

namespace {

RunConfig desk_preset() {
    RunConfig cfg;
    cfg.preset = "desk";

    cfg.dataset.identities = 4;
    cfg.dataset.frames = 8;
    cfg.dataset.cameras = 4;
    cfg.dataset.resolution = 64;
    cfg.dataset.uv_resolution = 32;
    cfg.dataset.view_extent = 1.4f;

    cfg.fit.unet.hidden_channels = 8;
    cfg.fit.unet.levels = 3;
    cfg.fit.unet.uv_resolution = 32;
    cfg.fit.lr = 1e-3f;
    cfg.fit.iterations = 3000;
    cfg.fit.warmup_steps = 200;

    cfg.diffusion.model.blocks = 4;
    cfg.diffusion.model.heads = 4;
    cfg.diffusion.model.d_model = 128;
    cfg.diffusion.model.ffn_hidden = 256;
    cfg.diffusion.epochs = 2000;
    cfg.diffusion.batch = 4;
    cfg.diffusion.lr = 1e-3f;
    cfg.diffusion.lr_decay_every = 200;
    cfg.diffusion.lr_decay = 0.9f;

    cfg.probes.pose_count = 4;
    cfg.probes.camera_count = 4;
    cfg.probes.resolution = 64;
    cfg.probes.scene = cfg.dataset;
    cfg.probes.unet = cfg.fit.unet;

    cfg.ddim_steps = 50;
    cfg.ddim_eta = 0.0;
    return cfg;
}

RunConfig paper_preset() {
    RunConfig cfg;
    cfg.preset = "paper";

    cfg.dataset.identities = 500;
    cfg.dataset.frames = 64;
    cfg.dataset.cameras = 8;
    cfg.dataset.resolution = 1024;
    cfg.dataset.uv_resolution = 256;

    cfg.fit.unet.hidden_channels = 64;
    cfg.fit.unet.levels = 3;
    cfg.fit.unet.uv_resolution = 256;
    cfg.fit.lr = 1e-4f;
    cfg.fit.iterations = 700000;
    cfg.fit.warmup_steps = 30000;

    cfg.diffusion.model.blocks = 12;
    cfg.diffusion.model.heads = 16;
    cfg.diffusion.model.d_model = 1024;
    cfg.diffusion.model.ffn_hidden = 2048;
    cfg.diffusion.epochs = 6000;
    cfg.diffusion.batch = 16;
    cfg.diffusion.lr = 2e-4f;
    cfg.diffusion.lr_decay_every = 200;
    cfg.diffusion.lr_decay = 0.9f;

    cfg.probes.pose_count = 4;
    cfg.probes.camera_count = 4;
    cfg.probes.resolution = 256;
    cfg.probes.scene = cfg.dataset;
    cfg.probes.unet = cfg.fit.unet;

    cfg.ddim_steps = 50;
    cfg.ddim_eta = 0.0;
    return cfg;
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void merge_dataset(const nlohmann::json& j, DatasetConfig& c) {
    get_if(j, "identities", c.identities);
    get_if(j, "frames", c.frames);
    get_if(j, "cameras", c.cameras);
    get_if(j, "resolution", c.resolution);
    get_if(j, "seed", c.seed);
    get_if(j, "uv_resolution", c.uv_resolution);
    get_if(j, "joint_count", c.joint_count);
    get_if(j, "radial_segments", c.radial_segments);
    get_if(j, "height_segments", c.height_segments);
    get_if(j, "tube_radius", c.tube_radius);
    get_if(j, "view_extent", c.view_extent);
    if (j.contains("background")) {
        auto bg = j.at("background");
        c.background = {bg[0].get<float>(), bg[1].get<float>(), bg[2].get<float>()};
    }
}

void merge_unet(const nlohmann::json& j, UNetConfig& c) {
    get_if(j, "input_channels", c.input_channels);
    get_if(j, "hidden_channels", c.hidden_channels);
    get_if(j, "levels", c.levels);
    get_if(j, "output_channels", c.output_channels);
    get_if(j, "uv_resolution", c.uv_resolution);
}

void merge_fit(const nlohmann::json& j, FitConfig& c) {
    if (j.contains("unet")) merge_unet(j.at("unet"), c.unet);
    get_if(j, "lambda_pix", c.loss.pix);
    get_if(j, "lambda_str", c.loss.structural);
    get_if(j, "lambda_per", c.loss.perceptual);
    get_if(j, "lambda_m", c.loss.mask);
    get_if(j, "lr", c.lr);
    get_if(j, "weight_decay", c.weight_decay);
    get_if(j, "iterations", c.iterations);
    get_if(j, "warmup_steps", c.warmup_steps);
    get_if(j, "seed", c.seed);
    get_if(j, "log_every", c.log_every);
}

void merge_diffusion(const nlohmann::json& j, DiffusionTrainConfig& c) {
    get_if(j, "blocks", c.model.blocks);
    get_if(j, "heads", c.model.heads);
    get_if(j, "d_model", c.model.d_model);
    get_if(j, "ffn_hidden", c.model.ffn_hidden);
    if (j.contains("time_mode")) {
        std::string mode = j.at("time_mode").get<std::string>();
        if (mode == "token")
            c.model.time_mode = DenoiserConfig::TimeMode::kToken;
        else if (mode == "add")
            c.model.time_mode = DenoiserConfig::TimeMode::kAdd;
        else
            throw Error("config: time_mode must be \"token\" or \"add\"");
    }
    if (j.contains("token_mode")) {
        std::string mode = j.at("token_mode").get<std::string>();
        if (mode == "layerwise")
            c.token_mode = TokenMode::kLayerwise;
        else if (mode == "flat")
            c.token_mode = TokenMode::kFlat;
        else
            throw Error("config: token_mode must be \"layerwise\" or \"flat\"");
    }
    get_if(j, "chunk_width", c.chunk_width);
    get_if(j, "schedule_steps", c.schedule_steps);
    get_if(j, "beta_start", c.beta_start);
    get_if(j, "beta_end", c.beta_end);
    get_if(j, "epochs", c.epochs);
    get_if(j, "batch", c.batch);
    get_if(j, "lr", c.lr);
    get_if(j, "weight_decay", c.weight_decay);
    get_if(j, "lr_decay_every", c.lr_decay_every);
    get_if(j, "lr_decay", c.lr_decay);
    get_if(j, "seed", c.seed);
}

void merge_probes(const nlohmann::json& j, ProbeConfig& c) {
    get_if(j, "pose_count", c.pose_count);
    get_if(j, "camera_count", c.camera_count);
    get_if(j, "resolution", c.resolution);
    get_if(j, "pose_seed", c.pose_seed);
    if (j.contains("scene")) merge_dataset(j.at("scene"), c.scene);
    if (j.contains("unet")) merge_unet(j.at("unet"), c.unet);
}

}  // namespace

RunConfig make_preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw Error("config: unknown preset \"" + name + "\" (expected desk or paper)");
}

RunConfig run_config_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    std::string preset = "desk";
    get_if(j, "preset", preset);
    RunConfig cfg = make_preset(preset);
    if (j.contains("seed")) {
        cfg.seed = j.at("seed").get<uint64_t>();
        cfg.dataset.seed = cfg.seed;
        cfg.fit.seed = cfg.seed;
        cfg.diffusion.seed = cfg.seed;
    }
    if (j.contains("dataset")) merge_dataset(j.at("dataset"), cfg.dataset);
    if (j.contains("fit")) merge_fit(j.at("fit"), cfg.fit);
    if (j.contains("diffusion")) merge_diffusion(j.at("diffusion"), cfg.diffusion);
    if (j.contains("probes")) merge_probes(j.at("probes"), cfg.probes);
    if (j.contains("sample")) {
        get_if(j.at("sample"), "ddim_steps", cfg.ddim_steps);
        get_if(j.at("sample"), "eta", cfg.ddim_eta);
    }
    // keep the probe scene/unet in sync unless explicitly overridden
    if (!j.contains("probes")) {
        cfg.probes.scene = cfg.dataset;
        cfg.probes.unet = cfg.fit.unet;
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return run_config_from_json_text(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("config: invalid JSON in " + path + ": " + e.what());
    }
}

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["preset"] = cfg.preset;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"identities", cfg.dataset.identities},
                    {"frames", cfg.dataset.frames},
                    {"cameras", cfg.dataset.cameras},
                    {"resolution", cfg.dataset.resolution},
                    {"seed", cfg.dataset.seed},
                    {"uv_resolution", cfg.dataset.uv_resolution},
                    {"joint_count", cfg.dataset.joint_count},
                    {"radial_segments", cfg.dataset.radial_segments},
                    {"height_segments", cfg.dataset.height_segments},
                    {"tube_radius", cfg.dataset.tube_radius},
                    {"view_extent", cfg.dataset.view_extent},
                    {"background",
                     {cfg.dataset.background.x, cfg.dataset.background.y, cfg.dataset.background.z}}};
    j["fit"] = {{"unet",
                 {{"input_channels", cfg.fit.unet.input_channels},
                  {"hidden_channels", cfg.fit.unet.hidden_channels},
                  {"levels", cfg.fit.unet.levels},
                  {"output_channels", cfg.fit.unet.output_channels},
                  {"uv_resolution", cfg.fit.unet.uv_resolution}}},
                {"lambda_pix", cfg.fit.loss.pix},
                {"lambda_str", cfg.fit.loss.structural},
                {"lambda_per", cfg.fit.loss.perceptual},
                {"lambda_m", cfg.fit.loss.mask},
                {"lr", cfg.fit.lr},
                {"weight_decay", cfg.fit.weight_decay},
                {"iterations", cfg.fit.iterations},
                {"warmup_steps", cfg.fit.warmup_steps},
                {"seed", cfg.fit.seed},
                {"log_every", cfg.fit.log_every}};
    j["diffusion"] = {{"blocks", cfg.diffusion.model.blocks},
                      {"heads", cfg.diffusion.model.heads},
                      {"d_model", cfg.diffusion.model.d_model},
                      {"ffn_hidden", cfg.diffusion.model.ffn_hidden},
                      {"time_mode",
                       cfg.diffusion.model.time_mode == DenoiserConfig::TimeMode::kToken ? "token"
                                                                                         : "add"},
                      {"token_mode",
                       cfg.diffusion.token_mode == TokenMode::kLayerwise ? "layerwise" : "flat"},
                      {"chunk_width", cfg.diffusion.chunk_width},
                      {"schedule_steps", cfg.diffusion.schedule_steps},
                      {"beta_start", cfg.diffusion.beta_start},
                      {"beta_end", cfg.diffusion.beta_end},
                      {"epochs", cfg.diffusion.epochs},
                      {"batch", cfg.diffusion.batch},
                      {"lr", cfg.diffusion.lr},
                      {"weight_decay", cfg.diffusion.weight_decay},
                      {"lr_decay_every", cfg.diffusion.lr_decay_every},
                      {"lr_decay", cfg.diffusion.lr_decay},
                      {"seed", cfg.diffusion.seed}};
    j["probes"] = {{"pose_count", cfg.probes.pose_count},
                   {"camera_count", cfg.probes.camera_count},
                   {"resolution", cfg.probes.resolution},
                   {"pose_seed", cfg.probes.pose_seed}};
    j["sample"] = {{"ddim_steps", cfg.ddim_steps}, {"eta", cfg.ddim_eta}};
    return j.dump(2);
}

}  // namespace wsd
