#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/infer.hpp"
#include "planaudio/model.hpp"
#include "planaudio/tensor.hpp"
#include "planaudio/toyworld.hpp"

namespace planaudio {

struct ScfConfig {
    double sim_threshold = 0.5;  // matched pairs must exceed this to score
    double conf_floor = 0.1;     // detections below this are treated as noise

    void validate() const {
        if (!(sim_threshold >= 0.0 && sim_threshold <= 1.0)) {
            throw ConfigError("ScfConfig: sim_threshold must lie in [0, 1]");
        }
        if (!(conf_floor >= 0.0 && conf_floor <= 1.0)) {
            throw ConfigError("ScfConfig: conf_floor must lie in [0, 1]");
        }
    }
};

using ItemEmbedFn = std::function<Tensor(int)>;

// Semantic coverage: drop low-confidence detections, match detections to
// ground-truth items one-to-one in descending cosine similarity, and credit
// each match above the similarity threshold with similarity x confidence,
// normalized by the ground-truth count. One-to-one matching keeps the score
// inside [0, 1] no matter how many detections fire.
inline double scf(const std::vector<Detection>& detections, const std::vector<int>& gt_events,
                  const ItemEmbedFn& embed, const ScfConfig& cfg = {}) {
    cfg.validate();
    if (gt_events.empty()) throw ContractError("scf: ground truth must be nonempty");

    std::vector<Detection> kept;
    for (const Detection& d : detections) {
        if (d.confidence >= cfg.conf_floor) kept.push_back(d);
    }
    if (kept.empty()) return 0.0;

    std::vector<Tensor> gt_emb;
    gt_emb.reserve(gt_events.size());
    for (int item : gt_events) gt_emb.push_back(embed(item));
    std::vector<Tensor> det_emb;
    det_emb.reserve(kept.size());
    for (const Detection& d : kept) det_emb.push_back(embed(d.item));

    struct Pair {
        double sim;
        size_t g, d;
    };
    std::vector<Pair> pairs;
    pairs.reserve(gt_events.size() * kept.size());
    for (size_t g = 0; g < gt_emb.size(); ++g) {
        for (size_t d = 0; d < det_emb.size(); ++d) {
            pairs.push_back({cosine_sim_value(gt_emb[g], det_emb[d]), g, d});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        if (a.g != b.g) return a.g < b.g;
        return a.d < b.d;
    });

    std::vector<bool> g_used(gt_emb.size(), false), d_used(det_emb.size(), false);
    double total = 0.0;
    for (const Pair& p : pairs) {
        if (g_used[p.g] || d_used[p.d]) continue;
        g_used[p.g] = true;
        d_used[p.d] = true;
        if (p.sim > cfg.sim_threshold) total += p.sim * kept[p.d].confidence;
    }
    return total / static_cast<double>(gt_events.size());
}

// Levenshtein distance with unit costs, normalized by the reference length.
inline double payload_wer(const std::vector<int>& hyp, const std::vector<int>& ref) {
    if (ref.empty()) throw ContractError("payload_wer: reference must be nonempty");
    const size_t n = hyp.size(), m = ref.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            const size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(m);
}

// Mean per-vector cosine between a generated plan and its semantic target.
inline double latent_fidelity(const Tensor& pred, const Tensor& target) {
    if (pred.shape.size() != 2 || pred.shape != target.shape) {
        throw ShapeError(strformat("latent_fidelity: plan %s does not match target %s",
                                   pred.shape_str().c_str(), target.shape_str().c_str()));
    }
    const size_t k = pred.shape[0], d = pred.shape[1];
    if (k == 0) throw ContractError("latent_fidelity: plan holds no vectors");
    double total = 0.0;
    for (size_t i = 0; i < k; ++i) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (size_t c = 0; c < d; ++c) {
            const double a = pred.v[i * d + c], b = target.v[i * d + c];
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        total += dot / (std::max(std::sqrt(na), kCosineEps) *
                        std::max(std::sqrt(nb), kCosineEps));
    }
    return total / static_cast<double>(k);
}

enum class Orientation { HigherBetter, LowerBetter };

// Values keyed by (strategy, scenario, metric) with one declared orientation
// per metric name.
struct MetricTable {
    std::map<std::tuple<std::string, std::string, std::string>, double> values;
    std::map<std::string, Orientation> orientations;

    void set(const std::string& strategy, const std::string& scenario, const std::string& metric,
             double value, Orientation o) {
        auto it = orientations.find(metric);
        if (it != orientations.end() && it->second != o) {
            throw ContractError(strformat(
                "metric '%s' was already declared with the opposite orientation", metric.c_str()));
        }
        orientations[metric] = o;
        values[{strategy, scenario, metric}] = value;
    }

    double at(const std::string& strategy, const std::string& scenario,
              const std::string& metric) const {
        auto it = values.find({strategy, scenario, metric});
        if (it == values.end()) {
            throw IndexError(strformat("no value for (%s, %s, %s)", strategy.c_str(),
                                       scenario.c_str(), metric.c_str()));
        }
        return it->second;
    }
};

// Min-max normalize each metric across strategies within one scenario
// (inverting lower-better metrics so 1 is always best), then average the
// normalized metrics per strategy. A metric constant across strategies gives
// everyone 0.5.
inline std::map<std::string, double> normalized_score(const MetricTable& table,
                                                      const std::string& scenario) {
    std::vector<std::string> strategies, metrics;
    for (const auto& [key, value] : table.values) {
        if (std::get<1>(key) != scenario) continue;
        strategies.push_back(std::get<0>(key));
        metrics.push_back(std::get<2>(key));
    }
    std::sort(strategies.begin(), strategies.end());
    strategies.erase(std::unique(strategies.begin(), strategies.end()), strategies.end());
    std::sort(metrics.begin(), metrics.end());
    metrics.erase(std::unique(metrics.begin(), metrics.end()), metrics.end());

    if (strategies.empty()) {
        throw ContractError(strformat("scenario '%s' absent from the metric table",
                                      scenario.c_str()));
    }
    if (strategies.size() < 2) {
        throw ContractError("normalized_score: need at least two strategies to normalize");
    }

    std::map<std::string, double> score;
    for (const std::string& s : strategies) score[s] = 0.0;
    for (const std::string& metric : metrics) {
        double lo = 0.0, hi = 0.0;
        for (size_t i = 0; i < strategies.size(); ++i) {
            auto it = table.values.find({strategies[i], scenario, metric});
            if (it == table.values.end()) {
                throw ContractError(strformat("strategy '%s' lacks metric '%s' for scenario '%s'",
                                              strategies[i].c_str(), metric.c_str(),
                                              scenario.c_str()));
            }
            lo = i == 0 ? it->second : std::min(lo, it->second);
            hi = i == 0 ? it->second : std::max(hi, it->second);
        }
        const Orientation o = table.orientations.at(metric);
        for (const std::string& s : strategies) {
            const double v = table.values.at({s, scenario, metric});
            double norm = 0.5;
            if (hi > lo) {
                norm = (v - lo) / (hi - lo);
                if (o == Orientation::LowerBetter) norm = 1.0 - norm;
            }
            score[s] += norm;
        }
    }
    for (auto& [s, v] : score) v /= static_cast<double>(metrics.size());
    return score;
}

inline std::string table_to_csv(const MetricTable& table) {
    std::ostringstream out;
    out << "strategy,scenario,metric,value,orientation\n";
    for (const auto& [key, value] : table.values) {
        const Orientation o = table.orientations.at(std::get<2>(key));
        out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
            << strformat("%.10g", value) << ','
            << (o == Orientation::HigherBetter ? "higher_better" : "lower_better") << '\n';
    }
    return out.str();
}

struct ScenarioEval {
    size_t records = 0;
    size_t undecodable = 0;
    std::vector<int64_t> undecodable_ids;
    double scf_mean = 0.0;
    size_t scf_count = 0;
    double wer_mean = 0.0;
    size_t wer_count = 0;
    double token_accuracy_mean = 0.0;
    size_t token_accuracy_count = 0;
    double latent_fidelity_mean = 0.0;
    size_t latent_count = 0;
};

struct EvalReport {
    GenConfig gen;
    ScfConfig scf_cfg;
    size_t total_records = 0;
    std::array<ScenarioEval, 3> scenario;  // indexed by Scenario

    // Distribution and perceptual metrics that need pretrained reference
    // models; listed so reports say out loud what was not measured.
    static const std::vector<std::string>& unavailable_metrics() {
        static const std::vector<std::string> m = {"fad", "kl_divergence", "inception_score",
                                                   "clap_score", "utmos"};
        return m;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << strformat(
            "generation evaluation over %zu records (top_k=%zu, temperature=%g, "
            "max_frames=%zu, seed=%llu)\n",
            total_records, gen.top_k, gen.temperature, gen.max_frames,
            static_cast<unsigned long long>(gen.seed));
        out << strformat("scf settings: sim_threshold=%g conf_floor=%g\n", scf_cfg.sim_threshold,
                         scf_cfg.conf_floor);
        for (size_t i = 0; i < scenario.size(); ++i) {
            const ScenarioEval& s = scenario[i];
            if (s.records == 0) continue;
            out << strformat("[%s] records=%zu undecodable=%zu",
                             scenario_name(static_cast<Scenario>(i)), s.records, s.undecodable);
            if (!s.undecodable_ids.empty()) {
                out << " (ids:";
                for (int64_t id : s.undecodable_ids) out << ' ' << id;
                out << ')';
            }
            out << '\n';
            if (s.scf_count > 0) {
                out << strformat("  scf              %.6f over %zu records\n", s.scf_mean,
                                 s.scf_count);
            }
            if (s.wer_count > 0) {
                out << strformat("  payload_wer      %.6f over %zu records\n", s.wer_mean,
                                 s.wer_count);
            }
            if (s.token_accuracy_count > 0) {
                out << strformat("  token_accuracy   %.6f over %zu records\n",
                                 s.token_accuracy_mean, s.token_accuracy_count);
            }
            if (s.latent_count > 0) {
                out << strformat("  latent_fidelity  %.6f over %zu records\n",
                                 s.latent_fidelity_mean, s.latent_count);
            }
        }
        out << "unavailable:";
        for (const std::string& m : unavailable_metrics()) out << ' ' << m;
        out << " (these need pretrained reference models)\n";
        return out.str();
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "scenario,metric,value\n";
        for (size_t i = 0; i < scenario.size(); ++i) {
            const ScenarioEval& s = scenario[i];
            if (s.records == 0) continue;
            const char* name = scenario_name(static_cast<Scenario>(i));
            if (s.scf_count > 0) out << name << ",scf," << strformat("%.10g", s.scf_mean) << '\n';
            if (s.wer_count > 0) {
                out << name << ",payload_wer," << strformat("%.10g", s.wer_mean) << '\n';
            }
            if (s.token_accuracy_count > 0) {
                out << name << ",token_accuracy," << strformat("%.10g", s.token_accuracy_mean)
                    << '\n';
            }
            if (s.latent_count > 0) {
                out << name << ",latent_fidelity," << strformat("%.10g", s.latent_fidelity_mean)
                    << '\n';
            }
            out << name << ",undecodable_fraction,"
                << strformat("%.10g",
                             static_cast<double>(s.undecodable) / static_cast<double>(s.records))
                << '\n';
        }
        return out.str();
    }
};

// Full held-out pass: per record, a teacher-forced accuracy probe plus a free
// generation that is decoded and run through the event detector. A generation
// whose stream cannot be decoded scores zero coverage and full word error and
// is flagged by record id.
inline EvalReport evaluate(const Model& model, const ToyWorld& world,
                           const std::vector<Record>& split, const GenConfig& gen,
                           const ScfConfig& scf_cfg = {}) {
    gen.validate();
    scf_cfg.validate();
    if (split.empty()) throw ContractError("evaluate: test split is empty");

    const ModelConfig& cfg = model.config();
    EvalReport rep;
    rep.gen = gen;
    rep.scf_cfg = scf_cfg;
    ItemEmbedFn embed = [&world](int item) { return world.item_embedding(item); };

    std::array<double, 3> scf_sum{}, wer_sum{}, acc_sum{}, fid_sum{};
    for (const Record& r : split) {
        const size_t sc = static_cast<size_t>(r.scenario);
        ScenarioEval& s = rep.scenario[sc];
        s.records++;
        rep.total_records++;

        const FrameSeq truth = delay_encode(r.grid, cfg.pad_id());
        if (truth.steps() > 0) {
            UnifiedSequence seq = frame_sequence(r.text, static_cast<int>(cfg.latent_slots),
                                                 r.grid, cfg.pad_id(), cfg.markers());
            Graph g;
            ModelOutput out = model.materialize(g, model.forward(g, seq, r.semantic));
            size_t correct = 0;
            for (size_t q = 0; q < cfg.n_codebooks; ++q) {
                const Tensor& logits = out.audio_logits[q];
                for (size_t t = 0; t < truth.steps(); ++t) {
                    const double* row = logits.v.data() + t * logits.shape[1];
                    const size_t arg = static_cast<size_t>(
                        std::max_element(row, row + logits.shape[1]) - row);
                    if (static_cast<int32_t>(arg) == truth.at(t, q)) correct++;
                }
            }
            acc_sum[sc] += static_cast<double>(correct) /
                           static_cast<double>(truth.steps() * cfg.n_codebooks);
            s.token_accuracy_count++;
        }

        GenConfig per_record = gen;
        per_record.seed = derive_seed(gen.seed, "eval", static_cast<uint64_t>(r.id));
        GenTrace trace = generate(model, r.text, per_record);

        fid_sum[sc] += latent_fidelity(trace.latents, r.semantic);
        s.latent_count++;

        bool decodable = true;
        TokenGrid grid(0, cfg.n_codebooks);
        try {
            grid = decode_output(trace, cfg.pad_id()).grid;
        } catch (const LayoutError&) {
            decodable = false;
            s.undecodable++;
            s.undecodable_ids.push_back(r.id);
        }

        if (r.scenario != Scenario::Speech) {
            std::vector<int> gt;
            for (const PromptSpec::Event& e : r.spec.events) gt.push_back(e.id);
            double v = 0.0;
            if (decodable && !gt.empty()) {
                v = scf(world.detect_events(grid), gt, embed, scf_cfg);
            }
            scf_sum[sc] += v;
            s.scf_count++;
        }
        if (r.scenario != Scenario::Sound && !r.spec.payload.empty()) {
            double v = 1.0;
            if (decodable) v = payload_wer(world.extract_payload(grid), r.spec.payload);
            wer_sum[sc] += v;
            s.wer_count++;
        }
    }

    for (size_t i = 0; i < 3; ++i) {
        ScenarioEval& s = rep.scenario[i];
        if (s.scf_count > 0) s.scf_mean = scf_sum[i] / static_cast<double>(s.scf_count);
        if (s.wer_count > 0) s.wer_mean = wer_sum[i] / static_cast<double>(s.wer_count);
        if (s.token_accuracy_count > 0) {
            s.token_accuracy_mean = acc_sum[i] / static_cast<double>(s.token_accuracy_count);
        }
        if (s.latent_count > 0) {
            s.latent_fidelity_mean = fid_sum[i] / static_cast<double>(s.latent_count);
        }
    }
    return rep;
}

// Copies one model's per-scenario means into a cross-strategy table so runs
// trained under different curricula can be normalized against each other.
inline void add_report_metrics(MetricTable& table, const std::string& strategy,
                               const EvalReport& rep) {
    for (size_t i = 0; i < rep.scenario.size(); ++i) {
        const ScenarioEval& s = rep.scenario[i];
        if (s.records == 0) continue;
        const char* name = scenario_name(static_cast<Scenario>(i));
        if (s.scf_count > 0) {
            table.set(strategy, name, "scf", s.scf_mean, Orientation::HigherBetter);
        }
        if (s.wer_count > 0) {
            table.set(strategy, name, "payload_wer", s.wer_mean, Orientation::LowerBetter);
        }
        if (s.token_accuracy_count > 0) {
            table.set(strategy, name, "token_accuracy", s.token_accuracy_mean,
                      Orientation::HigherBetter);
        }
        if (s.latent_count > 0) {
            table.set(strategy, name, "latent_fidelity", s.latent_fidelity_mean,
                      Orientation::HigherBetter);
        }
    }
}

}  // namespace planaudio
