#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "planaudio/checkpoint.hpp"
#include "planaudio/common.hpp"
#include "planaudio/graph.hpp"
#include "planaudio/layout.hpp"
#include "planaudio/model.hpp"
#include "planaudio/optim.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/tensor.hpp"
#include "planaudio/toyworld.hpp"

namespace planaudio {

struct LossWeights {
    double lambda_cos = 1.0;     // cosine term weight inside the latent loss
    double lambda_latent = 1.0;  // latent loss weight in the total
    double lambda_audio = 1.0;   // audio loss weight in the total

    void validate() const {
        if (lambda_cos < 0.0 || lambda_latent < 0.0 || lambda_audio < 0.0)
            throw ConfigError("loss weights must be nonnegative");
    }
};

// Mean over latent slots of per-slot squared error plus weighted cosine
// distance to the pooled semantic target.
inline double latent_loss(const Tensor& pred, const Tensor& target, double lambda_cos) {
    if (pred.ndim() != 2 || target.ndim() != 2 || !pred.same_shape(target))
        throw ShapeError(strformat("latent_loss: shapes %s and %s disagree",
                                   pred.shape_str().c_str(), target.shape_str().c_str()));
    const size_t k_slots = pred.rows();
    const size_t d = pred.cols();
    if (k_slots == 0) throw ShapeError("latent_loss: need at least one latent slot");
    double total = 0.0;
    Tensor a = Tensor::zeros({d}), b = Tensor::zeros({d});
    for (size_t k = 0; k < k_slots; ++k) {
        for (size_t i = 0; i < d; ++i) {
            a.v[i] = pred.at(k, i);
            b.v[i] = target.at(k, i);
        }
        total += mse_value(a, b) + lambda_cos * (1.0 - cosine_sim_value(a, b));
    }
    return total / static_cast<double>(k_slots);
}

// Mean cross-entropy over every frame position and codebook, pads included.
// Expects one T x C logits tensor per codebook against a T-step frame block.
inline double audio_loss(const std::vector<Tensor>& logits, const FrameSeq& frames) {
    if (logits.size() != frames.n_codebooks)
        throw ContractError(strformat("audio_loss: %zu logit tensors for %zu codebooks",
                                      logits.size(), frames.n_codebooks));
    const size_t steps = frames.steps();
    double total = 0.0;
    size_t count = 0;
    for (size_t q = 0; q < logits.size(); ++q) {
        const Tensor& l = logits[q];
        if (l.ndim() != 2 || l.rows() != steps)
            throw ContractError(strformat("audio_loss: codebook %zu logits %s for %zu steps",
                                          q + 1, l.shape_str().c_str(), steps));
        const size_t classes = l.cols();
        Tensor row = Tensor::zeros({classes});
        for (size_t t = 0; t < steps; ++t) {
            const int32_t target = frames.at(t, q);
            if (target < 0 || static_cast<size_t>(target) >= classes)
                throw ContractError(strformat(
                    "audio_loss: token %d at step %zu, channel %zu outside %zu classes", target,
                    t + 1, q + 1, classes));
            for (size_t c = 0; c < classes; ++c) row.v[c] = l.at(t, c);
            total += log_sum_exp(row.v.data(), classes) - row.v[static_cast<size_t>(target)];
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

inline double total_loss(double latent, double audio, const LossWeights& w) {
    return w.lambda_latent * latent + w.lambda_audio * audio;
}

// Linear warmup to the peak, then inverse square root decay with a
// multiplicative floor.
inline double lr_at(int64_t step, double lr_peak, int64_t warmup, double floor_factor = 0.1) {
    if (step < 1) throw ContractError("lr_at: steps are 1-based");
    if (warmup > 0 && step <= warmup)
        return lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    const double decay =
        warmup > 0 ? std::sqrt(static_cast<double>(warmup) / static_cast<double>(step)) : 0.0;
    return lr_peak * std::max(floor_factor, decay);
}

// --- batching ---

inline size_t framed_length(const Record& r) {
    const size_t n = r.grid.n_steps;
    const size_t t = n == 0 ? 0 : n + r.grid.n_codebooks - 1;
    return r.text.size() + r.semantic.rows() + t + 4;
}

struct BatchPlan {
    std::vector<std::vector<size_t>> batches;  // indices into the planned record list
};

namespace detail {

struct PlanItem {
    size_t index;
    size_t length;
    int64_t id;
};

inline BatchPlan plan_batch_items(std::vector<PlanItem> items, size_t max_batch_bin,
                                  size_t max_batch_size, Rng& rng) {
    if (max_batch_bin == 0 || max_batch_size == 0)
        throw ContractError("plan_batches: both batch caps must be positive");
    for (const PlanItem& it : items)
        if (it.length > max_batch_bin)
            throw ContractError(strformat("record %lld has framed length %zu above the bin %zu",
                                          static_cast<long long>(it.id), it.length,
                                          max_batch_bin));
    // Fisher-Yates keeps the shuffle identical across standard libraries.
    for (size_t i = items.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(items[i - 1], items[j]);
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const PlanItem& a, const PlanItem& b) { return a.length < b.length; });

    BatchPlan plan;
    size_t used = 0;
    std::vector<size_t> open;
    for (const PlanItem& it : items) {
        if (!open.empty() && (used + it.length > max_batch_bin || open.size() == max_batch_size)) {
            plan.batches.push_back(std::move(open));
            open.clear();
            used = 0;
        }
        open.push_back(it.index);
        used += it.length;
    }
    if (!open.empty()) plan.batches.push_back(std::move(open));
    return plan;
}

}  // namespace detail

// Shuffle, order by framed length, then fill batches greedily while both the
// total-length bin and the record-count cap hold.
inline BatchPlan plan_batches(const std::vector<Record>& records, size_t max_batch_bin,
                              size_t max_batch_size, Rng& rng) {
    std::vector<detail::PlanItem> items;
    items.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i)
        items.push_back({i, framed_length(records[i]), records[i].id});
    return detail::plan_batch_items(std::move(items), max_batch_bin, max_batch_size, rng);
}

// --- curriculum ---

struct CurriculumStage {
    size_t begin = 0;
    size_t end = 0;                                 // half-open epoch range
    std::array<double, 3> weights{0.0, 0.0, 0.0};   // Sound, Speech, Composite
};

struct CurriculumSchedule {
    std::vector<CurriculumStage> stages;

    void validate(size_t total_epochs) const {
        if (stages.empty()) throw ConfigError("curriculum needs at least one stage");
        size_t cursor = 0;
        for (const CurriculumStage& s : stages) {
            if (s.begin != cursor || s.end < s.begin)
                throw ConfigError("curriculum stages must partition the epoch range in order");
            cursor = s.end;
            double sum = 0.0;
            for (double w : s.weights) {
                if (w < 0.0) throw ConfigError("curriculum weights must be nonnegative");
                sum += w;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw ConfigError(strformat("curriculum stage weights sum to %.12f, expected 1",
                                            sum));
        }
        if (cursor != total_epochs)
            throw ConfigError(strformat("curriculum covers %zu epochs, run has %zu", cursor,
                                        total_epochs));
    }

    size_t stage_at(size_t epoch) const {
        for (size_t i = 0; i < stages.size(); ++i)
            if (epoch >= stages[i].begin && epoch < stages[i].end) return i;
        throw ContractError(strformat("epoch %zu is outside the curriculum", epoch));
    }

    // The three preset strategies share stage boundaries at 20% and 50% of
    // the run (10 and 25 of a 50-epoch schedule).
    static CurriculumSchedule three_stage(size_t total, std::array<double, 3> first,
                                          std::array<double, 3> second,
                                          std::array<double, 3> third) {
        if (total == 0) throw ConfigError("curriculum needs at least one epoch");
        size_t b1 = total * 10 / 50;
        size_t b2 = total * 25 / 50;
        CurriculumSchedule s;
        if (b1 > 0) s.stages.push_back({0, b1, first});
        if (b2 > b1) s.stages.push_back({b1, b2, second});
        s.stages.push_back({b2, total, third});
        s.validate(total);
        return s;
    }

    static CurriculumSchedule constant(size_t total) {
        const std::array<double, 3> even{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        return three_stage(total, even, even, even);
    }

    static CurriculumSchedule gradual(size_t total) {
        return three_stage(total, {0.40, 0.40, 0.20}, {0.40, 0.20, 0.40}, {0.25, 0.25, 0.50});
    }

    static CurriculumSchedule disjoint(size_t total) {
        return three_stage(total, {0.50, 0.50, 0.00}, {0.50, 0.50, 0.00}, {0.00, 0.00, 1.00});
    }

    static CurriculumSchedule preset(const std::string& name, size_t total) {
        if (name == "constant") return constant(total);
        if (name == "gradual") return gradual(total);
        if (name == "disjoint") return disjoint(total);
        throw ConfigError(strformat("unknown curriculum '%s'", name.c_str()));
    }
};

inline Scenario curriculum_draw(const CurriculumSchedule& schedule, size_t epoch, Rng& rng) {
    const CurriculumStage& stage = schedule.stages[schedule.stage_at(epoch)];
    const double u = rng.uniform();
    double cum = 0.0;
    int last_positive = -1;
    for (int s = 0; s < 3; ++s) {
        const double w = stage.weights[static_cast<size_t>(s)];
        if (w <= 0.0) continue;
        last_positive = s;
        cum += w;
        if (u < cum) return static_cast<Scenario>(s);
    }
    if (last_positive < 0) throw ContractError("curriculum stage has no positive weight");
    return static_cast<Scenario>(last_positive);
}

// --- loss graph builders ---

// (1/K) sum_k [ mse(pred_k, target_k) + lambda (1 - cos(pred_k, target_k)) ]
inline int latent_loss_node(Graph& g, int latent_pred, const Tensor& target, double lambda_cos) {
    if (target.ndim() != 2 || target.rows() == 0)
        throw ShapeError("latent_loss_node: target must be K x d_sem");
    const size_t k_slots = target.rows();
    int acc = -1;
    for (size_t k = 0; k < k_slots; ++k) {
        Tensor row = Tensor::zeros({1, target.cols()});
        for (size_t d = 0; d < target.cols(); ++d) row.at(0, d) = target.at(k, d);
        const int tgt = g.constant(std::move(row));
        const int pred_k = g.slice_rows(latent_pred, k, k + 1);
        int term = g.mse(pred_k, tgt);
        term = g.add(term, g.affine(g.cosine_sim(pred_k, tgt), -lambda_cos, lambda_cos));
        acc = acc < 0 ? term : g.add(acc, term);
    }
    return g.affine(acc, 1.0 / static_cast<double>(k_slots), 0.0);
}

// Mean cross-entropy over the T*Q frame positions plus the stop position,
// which is supervised on codebook 1's reserved stop class.
inline int audio_stop_loss_node(Graph& g, const Model& model, const ForwardResult& fr,
                                const FrameSeq& frames) {
    const ModelConfig& cfg = model.config();
    if (frames.n_codebooks != fr.audio_logits.size())
        throw ContractError(strformat("audio_stop_loss_node: %zu codebooks in frames, %zu heads",
                                      frames.n_codebooks, fr.audio_logits.size()));
    const size_t steps = frames.steps();
    if (steps != fr.frames)
        throw ContractError(strformat("audio_stop_loss_node: %zu frame steps, model saw %zu",
                                      steps, fr.frames));
    int acc = g.softmax_cross_entropy(fr.stop_logits, cfg.stop_class());
    if (steps > 0) {
        for (size_t q = 0; q < fr.audio_logits.size(); ++q) {
            std::vector<int64_t> targets(steps);
            for (size_t t = 0; t < steps; ++t) targets[t] = frames.at(t, q);
            acc = g.add(acc, g.softmax_xent_sum(fr.audio_logits[q], targets));
        }
    }
    const double positions = static_cast<double>(steps * fr.audio_logits.size() + 1);
    return g.affine(acc, 1.0 / positions, 0.0);
}

// --- trainer ---

struct TrainConfig {
    size_t epochs = 6;
    double lr_peak = 5e-4;
    size_t warmup = 300;
    double floor_factor = 0.1;
    size_t accumulate = 2;       // micro-batches per optimizer step
    size_t max_batch_bin = 2000; // total framed positions per batch
    size_t max_batch_size = 16;
    LossWeights weights;
    std::string curriculum = "constant";
    uint64_t seed = 7;
    std::string checkpoint_stem;  // when set, a rolling checkpoint per epoch

    void validate() const {
        if (epochs == 0) throw ConfigError("training needs at least one epoch");
        if (lr_peak <= 0.0) throw ConfigError("lr_peak must be positive");
        if (floor_factor < 0.0 || floor_factor > 1.0)
            throw ConfigError("floor_factor must lie in [0, 1]");
        if (accumulate == 0) throw ConfigError("accumulate must be positive");
        if (max_batch_bin == 0 || max_batch_size == 0)
            throw ConfigError("batch caps must be positive");
        weights.validate();
    }
};

struct EpochMetrics {
    size_t epoch = 0;
    size_t stage = 0;
    double l_latent = 0.0;
    double l_audio = 0.0;
    double l_total = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

inline nlohmann::json metrics_to_json(const EpochMetrics& m) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["stage"] = m.stage;
    j["L_latent"] = m.l_latent;
    j["L_audio"] = m.l_audio;
    j["L_total"] = m.l_total;
    j["lr"] = m.lr;
    j["wall_seconds"] = m.wall_seconds;
    return j;
}

inline void save_metrics(const std::string& path, const std::vector<EpochMetrics>& log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    for (const EpochMetrics& m : log) f << metrics_to_json(m).dump() << '\n';
    if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
}

class Trainer {
public:
    Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, std::vector<Record> dataset,
            CurriculumSchedule schedule)
        : tcfg_(tcfg),
          model_(mcfg, tcfg.seed),
          records_(std::move(dataset)),
          schedule_(std::move(schedule)) {
        mcfg.validate();
        tcfg_.validate();
        schedule_.validate(tcfg_.epochs);
        if (records_.empty()) throw ContractError("training needs a nonempty dataset");
        for (const Record& r : records_) {
            if (r.semantic.rows() != mcfg.latent_slots || r.semantic.cols() != mcfg.d_sem)
                throw ContractError(strformat(
                    "record %lld semantic block is %s, model wants [%zux%zu]",
                    static_cast<long long>(r.id), r.semantic.shape_str().c_str(),
                    mcfg.latent_slots, mcfg.d_sem));
            if (r.grid.n_codebooks != mcfg.n_codebooks)
                throw ContractError(strformat("record %lld carries %zu codebooks, model wants %zu",
                                              static_cast<long long>(r.id), r.grid.n_codebooks,
                                              mcfg.n_codebooks));
            pools_[static_cast<size_t>(r.scenario)].push_back(
                static_cast<size_t>(&r - records_.data()));
        }
    }

    Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, std::vector<Record> dataset)
        : Trainer(mcfg, tcfg, std::move(dataset),
                  CurriculumSchedule::preset(tcfg.curriculum, tcfg.epochs)) {}

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    int64_t optimizer_steps() const { return adam_.step; }
    size_t next_epoch() const { return next_epoch_; }

    std::vector<EpochMetrics> run() {
        std::vector<EpochMetrics> log;
        for (size_t e = next_epoch_; e < tcfg_.epochs; ++e) {
            log.push_back(run_epoch(e));
            next_epoch_ = e + 1;
            if (!tcfg_.checkpoint_stem.empty()) save_checkpoint(tcfg_.checkpoint_stem);
        }
        return log;
    }

    void save_checkpoint(const std::string& stem) const {
        write_param_file(stem + ".params.bin", model_.params());
        ParamStore moments;
        for (const auto& [name, m] : adam_.m) moments.add("adam.m." + name, m);
        for (const auto& [name, v] : adam_.v) moments.add("adam.v." + name, v);
        write_param_file(stem + ".opt.bin", moments);
        nlohmann::json meta;
        meta["format"] = 1;
        meta["next_epoch"] = next_epoch_;
        meta["adam_step"] = adam_.step;
        meta["epochs_total"] = tcfg_.epochs;
        std::ofstream f(stem + ".meta.json", std::ios::trunc);
        if (!f) throw IoError(strformat("cannot open '%s.meta.json' for writing", stem.c_str()));
        f << meta.dump(2) << '\n';
    }

    void load_checkpoint(const std::string& stem) {
        ParamStore loaded = read_param_file(stem + ".params.bin");
        adopt_params(loaded);
        ParamStore moments = read_param_file(stem + ".opt.bin");
        adam_.m.clear();
        adam_.v.clear();
        for (const auto& [name, t] : moments.values()) {
            if (name.rfind("adam.m.", 0) == 0)
                adam_.m.emplace(name.substr(7), t);
            else if (name.rfind("adam.v.", 0) == 0)
                adam_.v.emplace(name.substr(7), t);
            else
                throw IoError(strformat("optimizer file holds unexpected tensor '%s'",
                                        name.c_str()));
        }
        std::ifstream f(stem + ".meta.json");
        if (!f) throw IoError(strformat("cannot open '%s.meta.json' for reading", stem.c_str()));
        nlohmann::json meta;
        try {
            f >> meta;
            if (meta.at("format").get<int>() != 1)
                throw IoError("unsupported trainer checkpoint format");
            next_epoch_ = meta.at("next_epoch").get<size_t>();
            adam_.step = meta.at("adam_step").get<int64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("trainer metadata is not valid: %s", e.what()));
        }
    }

    // Per-record loss graph shared by training and evaluation: teacher-forced
    // forward, latent and audio objectives, weighted total. Returns node ids.
    struct LossNodes {
        int latent = -1;
        int audio = -1;
        int total = -1;
        ForwardResult forward;
    };

    LossNodes record_loss(Graph& g, const Record& r) const {
        const ModelConfig& cfg = model_.config();
        UnifiedSequence seq = frame_sequence(r.text, cfg.latent_slots, r.grid, cfg.pad_id(),
                                             cfg.markers());
        LossNodes nodes;
        nodes.forward = model_.forward(g, seq, r.semantic);
        nodes.latent = latent_loss_node(g, nodes.forward.latent_pred, r.semantic,
                                        tcfg_.weights.lambda_cos);
        FrameSeq frames = delay_encode(r.grid, cfg.pad_id());
        nodes.audio = audio_stop_loss_node(g, model_, nodes.forward, frames);
        nodes.total = g.add(g.affine(nodes.latent, tcfg_.weights.lambda_latent, 0.0),
                            g.affine(nodes.audio, tcfg_.weights.lambda_audio, 0.0));
        return nodes;
    }

private:
    void adopt_params(const ParamStore& loaded) {
        ParamStore& store = model_.params();
        if (loaded.tensor_count() != store.tensor_count())
            throw IoError(strformat("checkpoint holds %zu tensors, model has %zu",
                                    loaded.tensor_count(), store.tensor_count()));
        for (const auto& [name, t] : loaded.values()) {
            if (!store.has(name))
                throw IoError(strformat("checkpoint tensor '%s' is not a model parameter",
                                        name.c_str()));
            Tensor& dst = store.value(name);
            if (!dst.same_shape(t))
                throw IoError(strformat("checkpoint tensor '%s' is %s, model wants %s",
                                        name.c_str(), t.shape_str().c_str(),
                                        dst.shape_str().c_str()));
            dst = t;
        }
    }

    BatchPlan plan_pool(size_t scenario, Rng& rng) const {
        std::vector<detail::PlanItem> items;
        for (size_t idx : pools_[scenario])
            items.push_back({idx, framed_length(records_[idx]), records_[idx].id});
        return detail::plan_batch_items(std::move(items), tcfg_.max_batch_bin,
                                        tcfg_.max_batch_size, rng);
    }

    EpochMetrics run_epoch(size_t epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng er(derive_seed(tcfg_.seed, "train", epoch));
        std::array<BatchPlan, 3> plans;
        std::array<size_t, 3> cursors{0, 0, 0};
        size_t total_batches = 0;
        for (size_t s = 0; s < 3; ++s) {
            if (!pools_[s].empty()) plans[s] = plan_pool(s, er);
            total_batches += plans[s].batches.size();
        }
        if (total_batches == 0) throw ContractError("no batches to train on");

        ParamStore& store = model_.params();
        store.zero_grads();
        size_t accumulated = 0;
        double last_lr = 0.0;
        double sum_latent = 0.0, sum_audio = 0.0, sum_total = 0.0;
        size_t seen = 0;

        for (size_t micro = 0; micro < total_batches; ++micro) {
            const Scenario sc = curriculum_draw(schedule_, epoch, er);
            const size_t s = static_cast<size_t>(sc);
            if (plans[s].batches.empty())
                throw ContractError(strformat("curriculum drew %s but the dataset has none",
                                              scenario_name(sc)));
            if (cursors[s] == plans[s].batches.size()) {
                plans[s] = plan_pool(s, er);  // reshuffled pass over the pool
                cursors[s] = 0;
            }
            const std::vector<size_t>& batch = plans[s].batches[cursors[s]++];
            const double scale =
                1.0 / (static_cast<double>(batch.size()) * static_cast<double>(tcfg_.accumulate));
            for (size_t idx : batch) {
                const Record& r = records_[idx];
                Graph g;
                LossNodes nodes = record_loss(g, r);
                const double lt = g.value(nodes.total).item();
                if (!std::isfinite(lt))
                    throw Error(strformat(
                        "loss is not finite at epoch %zu, micro-batch %zu, record %lld", epoch,
                        micro, static_cast<long long>(r.id)));
                g.backward(nodes.total);
                g.accumulate_param_grads(
                    [&](const std::string& name) -> Tensor& { return store.grad(name); }, scale);
                sum_latent += g.value(nodes.latent).item();
                sum_audio += g.value(nodes.audio).item();
                sum_total += lt;
                ++seen;
            }
            if (++accumulated == tcfg_.accumulate) {
                last_lr = lr_at(adam_.step + 1, tcfg_.lr_peak,
                                static_cast<int64_t>(tcfg_.warmup), tcfg_.floor_factor);
                adam_step(store, adam_, last_lr);
                store.zero_grads();
                accumulated = 0;
            }
        }
        if (accumulated > 0) {
            last_lr = lr_at(adam_.step + 1, tcfg_.lr_peak, static_cast<int64_t>(tcfg_.warmup),
                            tcfg_.floor_factor);
            adam_step(store, adam_, last_lr);
            store.zero_grads();
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.stage = schedule_.stage_at(epoch);
        m.l_latent = sum_latent / static_cast<double>(seen);
        m.l_audio = sum_audio / static_cast<double>(seen);
        m.l_total = sum_total / static_cast<double>(seen);
        m.lr = last_lr;
        m.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return m;
    }

    TrainConfig tcfg_;
    Model model_;
    std::vector<Record> records_;
    CurriculumSchedule schedule_;
    std::array<std::vector<size_t>, 3> pools_;
    AdamState adam_;
    size_t next_epoch_ = 0;
};

}  // namespace planaudio
