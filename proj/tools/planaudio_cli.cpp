// Command-line front end: gen-data, train, generate, eval, verify. Every
// command reloads the one flat config (file, then flag overrides), derives
// its subsystem seed from the root seed, and writes a run manifest with the
// full config echo and checksums of the files it produced.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planaudio/checkpoint.hpp"
#include "planaudio/config.hpp"
#include "planaudio/eval.hpp"
#include "planaudio/infer.hpp"
#include "planaudio/toyworld.hpp"
#include "planaudio/train.hpp"
#include "planaudio/verify.hpp"

namespace {

using namespace planaudio;

std::string file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(strformat("cannot open '%s' for checksumming", path.c_str()));
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string bytes = buf.str();
    return strformat("%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
}

// One manifest per command run: the resolved config, what was produced, and
// a checksum per produced file so reruns are comparable at a glance.
void write_manifest(const RunConfig& cfg, const std::string& command,
                    const nlohmann::json& outputs, const std::vector<std::string>& files) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = cfg.to_json();
    j["outputs"] = outputs;
    nlohmann::json sums;
    for (const std::string& f : files) sums[f] = file_checksum(f);
    j["checksums"] = sums;
    const std::string path = cfg.out_dir + "/run_" + command + ".json";
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    f << j.dump(2) << '\n';
    if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    f << body;
    if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
}

std::string config_header(const RunConfig& cfg) {
    return "# config: " + cfg.to_json().dump() + "\n";
}

// Flag overrides land on top of the config file. CLI11 only writes bound
// variables when the flag is present, so each command stages overrides in
// locals and applies them by option count after parsing.
struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir;
    std::string checkpoint;

    CLI::Option* config_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* ckpt_opt = nullptr;

    void attach(CLI::App* cmd, bool with_checkpoint) {
        config_opt = cmd->add_option("--config", config_path,
                                     "Flat JSON config file; flags override its keys");
        seed_opt = cmd->add_option("--seed", seed, "Root seed for every subsystem");
        out_opt = cmd->add_option("--out", out_dir, "Output directory");
        if (with_checkpoint)
            ckpt_opt = cmd->add_option("--checkpoint", checkpoint,
                                       "Checkpoint stem (default <out>/ckpt)");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (config_opt->count() > 0) cfg = RunConfig::load(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (out_opt->count() > 0) cfg.out_dir = out_dir;
        if (ckpt_opt && ckpt_opt->count() > 0) cfg.checkpoint = checkpoint;
        std::filesystem::create_directories(cfg.out_dir);
        return cfg;
    }
};

int cmd_gen_data(const RunConfig& cfg) {
    const WorldConfig wcfg = cfg.world_config();
    ToyWorld world(wcfg);
    world.save(cfg.world_path());

    auto build_split = [&](const char* label, const std::array<size_t, 3>& counts) {
        Rng rng(cfg.data_seed(label));
        std::vector<Record> records;
        int64_t id = 0;
        for (size_t s = 0; s < 3; ++s)
            for (size_t i = 0; i < counts[s]; ++i)
                records.push_back(make_record(world, id++, static_cast<Scenario>(s), rng));
        return records;
    };

    const std::vector<Record> train = build_split("data-train", cfg.train_counts);
    const std::vector<Record> test = build_split("data-test", cfg.test_counts);
    save_dataset(cfg.train_path(), train);
    save_dataset(cfg.test_path(), test);

    nlohmann::json outputs;
    outputs["world"] = cfg.world_path();
    outputs["train"] = cfg.train_path();
    outputs["test"] = cfg.test_path();
    outputs["train_records"] = train.size();
    outputs["test_records"] = test.size();
    write_manifest(cfg, "gen-data", outputs,
                   {cfg.world_path(), cfg.train_path(), cfg.test_path()});

    std::printf("world -> %s\n", cfg.world_path().c_str());
    std::printf("train -> %s (%zu records)\n", cfg.train_path().c_str(), train.size());
    std::printf("test  -> %s (%zu records)\n", cfg.test_path().c_str(), test.size());
    return 0;
}

int cmd_train(const RunConfig& cfg, bool resume) {
    const WorldConfig wcfg = cfg.world_config();
    ToyWorld world(wcfg);
    std::vector<Record> records = load_dataset(cfg.train_path(), wcfg);

    const TrainConfig tcfg = cfg.train_config();
    Trainer trainer(cfg.model_config(world), tcfg, std::move(records));
    if (resume) trainer.load_checkpoint(tcfg.checkpoint_stem);

    const std::vector<EpochMetrics> log = trainer.run();
    if (!tcfg.checkpoint_stem.empty() && log.empty())
        trainer.save_checkpoint(tcfg.checkpoint_stem);

    if (resume) {
        std::ofstream f(cfg.metrics_path(), std::ios::app);
        if (!f) throw IoError(strformat("cannot open '%s' for appending",
                                        cfg.metrics_path().c_str()));
        for (const EpochMetrics& m : log) f << metrics_to_json(m).dump() << '\n';
    } else {
        save_metrics(cfg.metrics_path(), log);
    }

    for (const EpochMetrics& m : log)
        std::printf("epoch %zu stage %zu  L_latent %.4f  L_audio %.4f  L_total %.4f  "
                    "lr %.2e  %.1fs\n",
                    m.epoch, m.stage, m.l_latent, m.l_audio, m.l_total, m.lr, m.wall_seconds);

    const std::string stem = tcfg.checkpoint_stem;
    nlohmann::json outputs;
    outputs["checkpoint_stem"] = stem;
    outputs["metrics"] = cfg.metrics_path();
    outputs["epochs_run"] = log.size();
    outputs["next_epoch"] = trainer.next_epoch();
    outputs["optimizer_steps"] = trainer.optimizer_steps();
    if (!log.empty()) {
        outputs["final_L_total"] = log.back().l_total;
        outputs["final_L_latent"] = log.back().l_latent;
        outputs["final_L_audio"] = log.back().l_audio;
    }
    write_manifest(cfg, "train", outputs,
                   {stem + ".params.bin", stem + ".opt.bin", stem + ".meta.json",
                    cfg.metrics_path()});
    std::printf("checkpoint -> %s.{params.bin,opt.bin,meta.json}\n", stem.c_str());
    return 0;
}

int cmd_generate(const RunConfig& cfg, const std::string& prompt, bool have_top_k,
                 size_t top_k, bool have_temp, double temperature) {
    RunConfig run = cfg;
    if (have_top_k) run.top_k = top_k;
    if (have_temp) run.temperature = temperature;

    const WorldConfig wcfg = run.world_config();
    ToyWorld world(wcfg);
    Model model(run.model_config(world), 1);
    adopt_param_file(model.params(), run.checkpoint_stem() + ".params.bin");

    const std::vector<int32_t> text = world.tokenize(prompt);
    if (text.empty()) throw ConfigError("prompt is empty after tokenization");

    const GenConfig gcfg = run.gen_config();
    const GenTrace trace = generate(model, text, gcfg);
    const std::string trace_path = run.out_dir + "/trace.json";
    save_trace(trace_path, trace);

    // Sampled streams from a weak model can violate the pad pattern; that is
    // a property of the output, not a command failure, so it lands in
    // decoded.json instead of aborting the run.
    nlohmann::json dj;
    dj["termination"] = termination_name(trace.termination);
    size_t decoded_steps = 0, dropped_steps = 0;
    std::string heard;
    std::string decode_error;
    try {
        const DecodedAudio decoded = decode_output(trace, model.config().pad_id());
        dj["n"] = decoded.grid.n_steps;
        dj["q"] = decoded.grid.n_codebooks;
        dj["tokens"] = decoded.grid.tok;
        dj["dropped_steps"] = decoded.dropped_steps;
        decoded_steps = decoded.grid.n_steps;
        dropped_steps = decoded.dropped_steps;

        nlohmann::json events = nlohmann::json::array();
        for (const Detection& d : world.detect_events(decoded.grid)) {
            nlohmann::json e;
            e["item"] = world.item_name(d.item);
            e["confidence"] = d.confidence;
            e["begin"] = d.begin;
            e["end"] = d.end;
            events.push_back(std::move(e));
            if (!heard.empty()) heard += ' ';
            heard += world.item_name(d.item);
        }
        dj["events"] = std::move(events);
        nlohmann::json payload = nlohmann::json::array();
        for (int w : world.extract_payload(decoded.grid))
            payload.push_back(world.item_name(world.word_item(w)));
        dj["payload"] = std::move(payload);
    } catch (const LayoutError& e) {
        dj["undecodable"] = true;
        dj["error"] = e.what();
        decode_error = e.what();
    }
    const std::string decoded_path = run.out_dir + "/decoded.json";
    write_text(decoded_path, dj.dump(2) + "\n");

    nlohmann::json outputs;
    outputs["prompt"] = prompt;
    outputs["text_tokens"] = text.size();
    outputs["trace"] = trace_path;
    outputs["decoded"] = decoded_path;
    outputs["termination"] = termination_name(trace.termination);
    outputs["frames"] = trace.frames.steps();
    if (decode_error.empty()) {
        outputs["decoded_steps"] = decoded_steps;
        outputs["dropped_steps"] = dropped_steps;
    } else {
        outputs["undecodable"] = true;
    }
    write_manifest(run, "generate", outputs, {trace_path, decoded_path});

    std::printf("prompt: %s\n", prompt.c_str());
    if (decode_error.empty()) {
        std::printf("terminated: %s after %zu frames, decoded %zu grid steps (%zu dropped)\n",
                    termination_name(trace.termination), trace.frames.steps(), decoded_steps,
                    dropped_steps);
        std::printf("heard: %s\n", heard.empty() ? "(nothing)" : heard.c_str());
    } else {
        std::printf("terminated: %s after %zu frames, stream undecodable: %s\n",
                    termination_name(trace.termination), trace.frames.steps(),
                    decode_error.c_str());
    }
    std::printf("trace -> %s\n", trace_path.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, bool have_top_k, size_t top_k,
             const std::vector<std::string>& strategies) {
    RunConfig run = cfg;
    if (have_top_k) run.top_k = top_k;

    const WorldConfig wcfg = run.world_config();
    ToyWorld world(wcfg);
    const std::vector<Record> split = load_dataset(run.test_path(), wcfg);
    const GenConfig gcfg = run.gen_config();
    const ScfConfig scf_cfg = run.scf_config();

    Model model(run.model_config(world), 1);
    nlohmann::json outputs;
    std::vector<std::string> files;

    if (strategies.empty()) {
        adopt_param_file(model.params(), run.checkpoint_stem() + ".params.bin");
        const EvalReport rep = evaluate(model, world, split, gcfg, scf_cfg);
        const std::string text_path = run.out_dir + "/report.txt";
        const std::string csv_path = run.out_dir + "/report.csv";
        write_text(text_path, config_header(run) + rep.to_text());
        write_text(csv_path, config_header(run) + rep.to_csv());
        std::fputs(rep.to_text().c_str(), stdout);
        outputs["report_text"] = text_path;
        outputs["report_csv"] = csv_path;
        outputs["records"] = rep.total_records;
        files = {text_path, csv_path};
    } else {
        // Each strategy names a checkpoint stem; all of them are scored on
        // the same split and folded into one min-max normalized table.
        MetricTable table;
        for (const std::string& spec : strategies) {
            const size_t eq = spec.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size())
                throw ConfigError(strformat("strategy '%s' must look like name=checkpoint_stem",
                                            spec.c_str()));
            const std::string name = spec.substr(0, eq);
            const std::string stem = spec.substr(eq + 1);
            adopt_param_file(model.params(), stem + ".params.bin");
            const EvalReport rep = evaluate(model, world, split, gcfg, scf_cfg);
            add_report_metrics(table, name, rep);
            const std::string text_path = run.out_dir + "/report_" + name + ".txt";
            write_text(text_path, config_header(run) + rep.to_text());
            files.push_back(text_path);
            outputs["reports"].push_back(text_path);
        }
        const std::string table_path = run.out_dir + "/metrics_table.csv";
        write_text(table_path, config_header(run) + table_to_csv(table));
        files.push_back(table_path);
        outputs["metrics_table"] = table_path;

        std::set<std::string> scenarios;
        for (const auto& [key, value] : table.values) scenarios.insert(std::get<1>(key));
        std::ostringstream scores;
        scores << "scenario,strategy,score\n";
        for (const std::string& sc : scenarios) {
            for (const auto& [name, score] : normalized_score(table, sc))
                scores << sc << ',' << name << ',' << strformat("%.10g", score) << '\n';
        }
        const std::string scores_path = run.out_dir + "/scores.csv";
        write_text(scores_path, config_header(run) + scores.str());
        files.push_back(scores_path);
        outputs["scores"] = scores_path;
        std::fputs(scores.str().c_str(), stdout);
    }

    outputs["records"] = split.size();
    write_manifest(run, "eval", outputs, files);
    return 0;
}

int cmd_verify(const RunConfig& cfg, bool inject_fault) {
    const VerifyReport report = run_verification(inject_fault);

    nlohmann::json suites = nlohmann::json::array();
    std::string failed_names;
    for (const SuiteResult& s : report.suites) {
        std::printf("suite %-10s %s  (%.2fs)  %s\n", s.name.c_str(),
                    s.passed ? "pass" : "FAIL", s.seconds, s.detail.c_str());
        nlohmann::json sj;
        sj["name"] = s.name;
        sj["passed"] = s.passed;
        sj["seconds"] = s.seconds;
        sj["detail"] = s.detail;
        suites.push_back(sj);
        if (!s.passed) failed_names += (failed_names.empty() ? "" : ", ") + s.name;
    }

    nlohmann::json outputs;
    outputs["suites"] = suites;
    outputs["all_passed"] = report.all_passed();
    outputs["fault_injected"] = inject_fault;
    write_manifest(cfg, "verify", outputs, {});

    if (!report.all_passed()) {
        std::fprintf(stderr, "verification failed in suite(s): %s\n", failed_names.c_str());
        return 2;
    }
    std::printf("all suites passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Plan-then-emit audio generation on a synthetic token world"};
    app.require_subcommand(1);

    CommonOpts gd_opts, tr_opts, gen_opts, ev_opts, vf_opts;

    CLI::App* gd = app.add_subcommand("gen-data", "Sample the world and write both dataset splits");
    gd_opts.attach(gd, false);

    CLI::App* tr = app.add_subcommand("train", "Train on the generated dataset");
    tr_opts.attach(tr, true);
    std::string schedule;
    size_t epochs = 0;
    bool resume = false;
    CLI::Option* schedule_opt =
        tr->add_option("--schedule", schedule, "Curriculum preset: constant, gradual, disjoint");
    CLI::Option* epochs_opt = tr->add_option("--epochs", epochs, "Total epochs to train");
    tr->add_flag("--resume", resume, "Continue from the checkpoint stem");

    CLI::App* gen = app.add_subcommand("generate", "Sample audio tokens for one text prompt");
    gen_opts.attach(gen, true);
    std::string prompt;
    size_t gen_top_k = 0;
    double gen_temp = 0.0;
    gen->add_option("--prompt", prompt, "Text prompt, whitespace separated words")->required();
    CLI::Option* gen_topk_opt = gen->add_option("--top-k", gen_top_k, "Sample from the k best");
    CLI::Option* gen_temp_opt = gen->add_option("--temperature", gen_temp, "Softmax temperature");

    CLI::App* ev = app.add_subcommand("eval", "Score generations on the held-out split");
    ev_opts.attach(ev, true);
    size_t ev_top_k = 0;
    std::vector<std::string> strategies;
    CLI::Option* ev_topk_opt = ev->add_option("--top-k", ev_top_k, "Sample from the k best");
    ev->add_option("--strategy", strategies,
                   "name=checkpoint_stem; repeat to compare runs in one table");

    CLI::App* vf = app.add_subcommand("verify", "Run the numerics, layout, and curriculum suites");
    vf_opts.attach(vf, false);
    bool inject_fault = false;
    vf->add_flag("--inject-gradient-fault", inject_fault,
                 "Debug: plant a 2x backward fault that the numerics suite must catch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
            e.get_name() == "CallForVersion")
            return app.exit(e);
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        if (gd->parsed()) return cmd_gen_data(gd_opts.resolve());
        if (tr->parsed()) {
            RunConfig cfg = tr_opts.resolve();
            if (schedule_opt->count() > 0) cfg.schedule = schedule;
            if (epochs_opt->count() > 0) cfg.epochs = epochs;
            return cmd_train(cfg, resume);
        }
        if (gen->parsed())
            return cmd_generate(gen_opts.resolve(), prompt, gen_topk_opt->count() > 0, gen_top_k,
                                gen_temp_opt->count() > 0, gen_temp);
        if (ev->parsed())
            return cmd_eval(ev_opts.resolve(), ev_topk_opt->count() > 0, ev_top_k, strategies);
        if (vf->parsed()) return cmd_verify(vf_opts.resolve(), inject_fault);
    } catch (const planaudio::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
