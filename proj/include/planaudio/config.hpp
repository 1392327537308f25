#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "planaudio/common.hpp"
#include "planaudio/eval.hpp"
#include "planaudio/infer.hpp"
#include "planaudio/model.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/toyworld.hpp"
#include "planaudio/train.hpp"

namespace planaudio {

// One flat, fully-documented key set drives every command. All randomness
// flows from the single root seed: the world, the training loop, and the
// sampler each get derive_seed(seed, <subsystem>) so a run is reproducible
// from this one artifact.
struct RunConfig {
    uint64_t seed = 2025;

    // world
    int n_event_types = 16;
    int n_words = 32;
    int32_t v_audio = 64;
    size_t n_codebooks = 4;
    size_t d_sem = 32;
    size_t latent_slots = 6;
    int world_max_frames = 96;
    int min_event_dur = 4;
    int max_event_dur = 12;
    int clean_dur = 4;

    // model
    size_t d_model = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_ff = 512;
    size_t max_positions = 160;

    // objective
    double lambda_cos = 1.0;
    double lambda_latent = 1.0;
    double lambda_audio = 1.0;

    // optimization
    size_t epochs = 5;
    double lr_peak = 5e-4;
    size_t warmup = 150;
    double floor_factor = 0.1;
    size_t accumulate = 1;
    size_t max_batch_bin = 1000;
    size_t max_batch_size = 16;
    std::string schedule = "constant";

    // sampling
    size_t top_k = 8;
    double temperature = 1.0;
    size_t gen_max_frames = 0;  // 0 resolves to world_max_frames + n_codebooks - 1

    // scoring
    double sim_threshold = 0.5;
    double conf_floor = 0.1;

    // dataset sizes
    std::array<size_t, 3> train_counts = {1000, 1000, 1000};
    std::array<size_t, 3> test_counts = {25, 25, 25};

    // paths
    std::string out_dir = "out";
    std::string checkpoint;  // empty resolves under out_dir

    uint64_t world_seed() const { return derive_seed(seed, "world"); }
    uint64_t train_seed() const { return derive_seed(seed, "train"); }
    uint64_t gen_seed() const { return derive_seed(seed, "gen"); }
    uint64_t data_seed(const char* split) const { return derive_seed(seed, split); }

    std::string world_path() const { return out_dir + "/world.json"; }
    std::string train_path() const { return out_dir + "/train.jsonl"; }
    std::string test_path() const { return out_dir + "/test.jsonl"; }
    std::string metrics_path() const { return out_dir + "/metrics.jsonl"; }
    std::string checkpoint_stem() const {
        return checkpoint.empty() ? out_dir + "/ckpt" : checkpoint;
    }

    WorldConfig world_config() const {
        WorldConfig w;
        w.n_event_types = n_event_types;
        w.n_words = n_words;
        w.v_audio = v_audio;
        w.n_codebooks = n_codebooks;
        w.d_sem = d_sem;
        w.latent_slots = latent_slots;
        w.max_frames = world_max_frames;
        w.min_event_dur = min_event_dur;
        w.max_event_dur = max_event_dur;
        w.clean_dur = clean_dur;
        w.seed = world_seed();
        w.validate();
        return w;
    }

    ModelConfig model_config(const ToyWorld& world) const {
        ModelConfig m;
        m.d_model = d_model;
        m.n_layers = n_layers;
        m.n_heads = n_heads;
        m.d_ff = d_ff;
        m.v_text = world.v_text();
        m.v_audio = world.config().v_audio;
        m.n_codebooks = world.config().n_codebooks;
        m.d_sem = world.config().d_sem;
        m.latent_slots = world.config().latent_slots;
        m.max_positions = max_positions;
        m.validate();
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = epochs;
        t.lr_peak = lr_peak;
        t.warmup = warmup;
        t.floor_factor = floor_factor;
        t.accumulate = accumulate;
        t.max_batch_bin = max_batch_bin;
        t.max_batch_size = max_batch_size;
        t.weights.lambda_cos = lambda_cos;
        t.weights.lambda_latent = lambda_latent;
        t.weights.lambda_audio = lambda_audio;
        t.curriculum = schedule;
        t.seed = train_seed();
        t.checkpoint_stem = checkpoint_stem();
        t.validate();
        return t;
    }

    GenConfig gen_config() const {
        GenConfig g;
        g.top_k = top_k;
        g.temperature = temperature;
        g.max_frames = gen_max_frames != 0
                           ? gen_max_frames
                           : static_cast<size_t>(world_max_frames) + n_codebooks - 1;
        g.seed = gen_seed();
        g.validate();
        return g;
    }

    ScfConfig scf_config() const {
        ScfConfig s;
        s.sim_threshold = sim_threshold;
        s.conf_floor = conf_floor;
        s.validate();
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["n_event_types"] = n_event_types;
        j["n_words"] = n_words;
        j["v_audio"] = v_audio;
        j["n_codebooks"] = n_codebooks;
        j["d_sem"] = d_sem;
        j["latent_slots"] = latent_slots;
        j["world_max_frames"] = world_max_frames;
        j["min_event_dur"] = min_event_dur;
        j["max_event_dur"] = max_event_dur;
        j["clean_dur"] = clean_dur;
        j["d_model"] = d_model;
        j["n_layers"] = n_layers;
        j["n_heads"] = n_heads;
        j["d_ff"] = d_ff;
        j["max_positions"] = max_positions;
        j["lambda_cos"] = lambda_cos;
        j["lambda_latent"] = lambda_latent;
        j["lambda_audio"] = lambda_audio;
        j["epochs"] = epochs;
        j["lr_peak"] = lr_peak;
        j["warmup"] = warmup;
        j["floor_factor"] = floor_factor;
        j["accumulate"] = accumulate;
        j["max_batch_bin"] = max_batch_bin;
        j["max_batch_size"] = max_batch_size;
        j["schedule"] = schedule;
        j["top_k"] = top_k;
        j["temperature"] = temperature;
        j["gen_max_frames"] = gen_max_frames;
        j["sim_threshold"] = sim_threshold;
        j["conf_floor"] = conf_floor;
        j["train_sound"] = train_counts[0];
        j["train_speech"] = train_counts[1];
        j["train_composite"] = train_counts[2];
        j["test_sound"] = test_counts[0];
        j["test_speech"] = test_counts[1];
        j["test_composite"] = test_counts[2];
        j["out_dir"] = out_dir;
        j["checkpoint"] = checkpoint;
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config must be a flat object");
        RunConfig c;
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "seed") c.seed = value.get<uint64_t>();
                else if (key == "n_event_types") c.n_event_types = value.get<int>();
                else if (key == "n_words") c.n_words = value.get<int>();
                else if (key == "v_audio") c.v_audio = value.get<int32_t>();
                else if (key == "n_codebooks") c.n_codebooks = value.get<size_t>();
                else if (key == "d_sem") c.d_sem = value.get<size_t>();
                else if (key == "latent_slots") c.latent_slots = value.get<size_t>();
                else if (key == "world_max_frames") c.world_max_frames = value.get<int>();
                else if (key == "min_event_dur") c.min_event_dur = value.get<int>();
                else if (key == "max_event_dur") c.max_event_dur = value.get<int>();
                else if (key == "clean_dur") c.clean_dur = value.get<int>();
                else if (key == "d_model") c.d_model = value.get<size_t>();
                else if (key == "n_layers") c.n_layers = value.get<size_t>();
                else if (key == "n_heads") c.n_heads = value.get<size_t>();
                else if (key == "d_ff") c.d_ff = value.get<size_t>();
                else if (key == "max_positions") c.max_positions = value.get<size_t>();
                else if (key == "lambda_cos") c.lambda_cos = value.get<double>();
                else if (key == "lambda_latent") c.lambda_latent = value.get<double>();
                else if (key == "lambda_audio") c.lambda_audio = value.get<double>();
                else if (key == "epochs") c.epochs = value.get<size_t>();
                else if (key == "lr_peak") c.lr_peak = value.get<double>();
                else if (key == "warmup") c.warmup = value.get<size_t>();
                else if (key == "floor_factor") c.floor_factor = value.get<double>();
                else if (key == "accumulate") c.accumulate = value.get<size_t>();
                else if (key == "max_batch_bin") c.max_batch_bin = value.get<size_t>();
                else if (key == "max_batch_size") c.max_batch_size = value.get<size_t>();
                else if (key == "schedule") c.schedule = value.get<std::string>();
                else if (key == "top_k") c.top_k = value.get<size_t>();
                else if (key == "temperature") c.temperature = value.get<double>();
                else if (key == "gen_max_frames") c.gen_max_frames = value.get<size_t>();
                else if (key == "sim_threshold") c.sim_threshold = value.get<double>();
                else if (key == "conf_floor") c.conf_floor = value.get<double>();
                else if (key == "train_sound") c.train_counts[0] = value.get<size_t>();
                else if (key == "train_speech") c.train_counts[1] = value.get<size_t>();
                else if (key == "train_composite") c.train_counts[2] = value.get<size_t>();
                else if (key == "test_sound") c.test_counts[0] = value.get<size_t>();
                else if (key == "test_speech") c.test_counts[1] = value.get<size_t>();
                else if (key == "test_composite") c.test_counts[2] = value.get<size_t>();
                else if (key == "out_dir") c.out_dir = value.get<std::string>();
                else if (key == "checkpoint") c.checkpoint = value.get<std::string>();
                else throw ConfigError(strformat("unknown config key '%s'", key.c_str()));
            } catch (const nlohmann::json::exception&) {
                throw ConfigError(strformat("config key '%s' has the wrong type", key.c_str()));
            }
        }
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError(strformat("cannot open config '%s'", path.c_str()));
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("config '%s' is not valid: %s", path.c_str(), e.what()));
        }
        return from_json(j);
    }
};

}  // namespace planaudio
