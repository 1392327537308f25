#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "planaudio/common.hpp"
#include "planaudio/layout.hpp"
#include "planaudio/model.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

enum class Termination { EOA, MAX_LEN };

inline const char* termination_name(Termination t) {
    return t == Termination::EOA ? "eoa" : "max_len";
}

struct GenConfig {
    size_t top_k = 8;
    double temperature = 1.0;
    size_t max_frames = 96;  // cap on emitted delayed steps
    uint64_t seed = 1;

    void validate() const {
        if (top_k == 0) throw ConfigError("GenConfig: top_k must be at least 1");
        if (!(temperature > 0.0)) throw ConfigError("GenConfig: temperature must be positive");
        if (max_frames == 0) throw ConfigError("GenConfig: max_frames must be at least 1");
    }
};

struct SampledToken {
    int32_t token = 0;
    double prob = 0.0;  // renormalized probability of the drawn class
};

// Keep the k largest logits, softmax the survivors at the given temperature,
// and draw one class. Ties at the cutoff keep the lower id, so the support is
// a deterministic function of the logits. k = 1 degenerates to argmax with
// probability exactly 1.
inline SampledToken top_k_sample(const double* logits, size_t n, size_t k, double temperature,
                                 Rng& rng) {
    if (n == 0) throw ContractError("top_k_sample: empty logit row");
    if (k == 0 || k > n) {
        throw ContractError(strformat("top_k_sample: k %zu outside [1, %zu]", k, n));
    }
    if (!(temperature > 0.0)) throw ContractError("top_k_sample: temperature must be positive");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](size_t a, size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });

    const double top = logits[order[0]];
    std::vector<double> weight(k);
    double total = 0.0;
    for (size_t i = 0; i < k; ++i) {
        weight[i] = std::exp((logits[order[i]] - top) / temperature);
        total += weight[i];
    }
    const double u = rng.uniform() * total;
    double cum = 0.0;
    size_t pick = k - 1;  // guards against round-off at the right edge
    for (size_t i = 0; i < k; ++i) {
        cum += weight[i];
        if (u < cum) {
            pick = i;
            break;
        }
    }
    return {static_cast<int32_t>(order[pick]), weight[pick] / total};
}

inline SampledToken top_k_sample(const std::vector<double>& logits, size_t k, double temperature,
                                 Rng& rng) {
    return top_k_sample(logits.data(), logits.size(), k, temperature, rng);
}

struct GenTrace {
    std::vector<int32_t> text;
    Tensor latents;  // K x d_sem, produced before any audio step
    FrameSeq frames;
    Termination termination = Termination::MAX_LEN;
    std::vector<std::vector<double>> step_probs;  // per emitted step, one chosen probability per codebook
    double stop_prob = 0.0;                       // probability of the stream-end draw, set on EOA
    uint64_t seed = 0;
};

// Two-phase decoding. Phase 1 reads the K semantic vectors deterministically,
// feeding each prediction back through the latent adapter exactly as the
// teacher-forced layout would feed ground truth. Phase 2 samples one frame
// per step from the codebook heads; codebook 1 draws over its full width, and
// its stream-end class terminates the loop with the other channels left
// unsampled for that step.
inline GenTrace generate(const Model& model, const std::vector<int32_t>& text,
                         const GenConfig& gen) {
    gen.validate();
    const ModelConfig& cfg = model.config();
    if (gen.top_k > cfg.audio_classes()) {
        throw ConfigError(strformat("GenConfig: top_k %zu exceeds the %zu audio classes",
                                    gen.top_k, cfg.audio_classes()));
    }
    if (text.empty()) throw ContractError("generate: text must be nonempty");
    for (int32_t t : text) {
        if (t < 0 || t >= cfg.v_text) {
            throw IndexError(strformat("generate: text token %d outside the %d-token vocabulary",
                                       t, cfg.v_text));
        }
    }
    const size_t k = cfg.latent_slots;
    const size_t worst = text.size() + k + gen.max_frames + 4;
    if (worst > cfg.max_positions) {
        throw ContractError(strformat(
            "generate: %zu text tokens with %zu latent slots and up to %zu frames need %zu "
            "positions, model holds %zu",
            text.size(), k, gen.max_frames, worst, cfg.max_positions));
    }

    const MarkerIds m = cfg.markers();
    GenTrace trace;
    trace.text = text;
    trace.seed = gen.seed;
    trace.latents = Tensor({k, cfg.d_sem});
    trace.frames.n_codebooks = cfg.n_codebooks;
    Rng rng(gen.seed);

    InputPlan plan;
    auto push_special = [&](int32_t tok) {
        InputPlan::Pos p;
        p.tag = Segment::SPECIAL;
        p.token = tok;
        plan.pos.push_back(std::move(p));
    };
    push_special(m.sot);
    for (int32_t t : text) {
        InputPlan::Pos p;
        p.tag = Segment::TEXT;
        p.token = t;
        plan.pos.push_back(std::move(p));
    }
    push_special(m.sol);

    std::vector<double> feed_rows;  // generated vectors, row-major
    auto feed_tensor = [&](size_t rows) {
        Tensor f({rows, cfg.d_sem});
        std::copy_n(feed_rows.begin(), rows * cfg.d_sem, f.v.begin());
        return f;
    };

    // Phase 1: slot i's prediction is read one position before the slot, so
    // the i-th readout runs on a plan holding slots 0..i-1 only.
    for (size_t i = 0; i < k; ++i) {
        Graph g;
        Tensor f;
        const bool has_feed = i >= 2;
        if (has_feed) f = feed_tensor(i - 1);
        BackboneResult bb = model.backbone(g, plan, has_feed ? &f : nullptr);
        int pred = model.project_latent(g, g.slice_rows(bb.hidden, plan.size() - 1, plan.size()));
        const Tensor& z = g.value(pred);
        std::copy_n(z.v.begin(), cfg.d_sem, trace.latents.v.begin() + i * cfg.d_sem);
        feed_rows.insert(feed_rows.end(), z.v.begin(), z.v.end());
        InputPlan::Pos p;
        p.tag = Segment::LATENT;
        p.latent_feed = static_cast<int>(i) - 1;
        plan.pos.push_back(std::move(p));
    }
    push_special(m.soa);

    const Tensor audio_feed = feed_tensor(k - 1);
    const size_t qn = cfg.n_codebooks;
    for (size_t t = 0; t < gen.max_frames; ++t) {
        Graph g;
        BackboneResult bb = model.backbone(g, plan, k > 1 ? &audio_feed : nullptr);
        int hrow = g.slice_rows(bb.hidden, plan.size() - 1, plan.size());
        const Tensor& l0 = g.value(model.audio_head(g, hrow, 0));
        SampledToken first = top_k_sample(l0.v.data(), l0.shape[1], gen.top_k, gen.temperature, rng);
        if (first.token == cfg.stop_class()) {
            trace.termination = Termination::EOA;
            trace.stop_prob = first.prob;
            return trace;
        }
        std::vector<int32_t> frame(qn);
        std::vector<double> probs(qn);
        frame[0] = first.token;
        probs[0] = first.prob;
        for (size_t q = 1; q < qn; ++q) {
            const Tensor& lq = g.value(model.audio_head(g, hrow, q));
            SampledToken s = top_k_sample(lq.v.data(), lq.shape[1], gen.top_k, gen.temperature, rng);
            frame[q] = s.token;
            probs[q] = s.prob;
        }
        trace.frames.tok.insert(trace.frames.tok.end(), frame.begin(), frame.end());
        trace.step_probs.push_back(std::move(probs));
        InputPlan::Pos p;
        p.tag = Segment::AUDIO;
        p.frame = std::move(frame);
        plan.pos.push_back(std::move(p));
    }
    trace.termination = Termination::MAX_LEN;
    return trace;
}

struct DecodedAudio {
    TokenGrid grid;
    size_t dropped_steps = 0;  // delayed steps discarded from a capped stream
};

// A stream that announced its end must decode exactly. A capped stream keeps
// the grid steps whose delayed channels all arrived and drops the unfinished
// tail, which is at most Q-1 steps.
inline DecodedAudio decode_output(const GenTrace& trace, int32_t pad) {
    const size_t qn = trace.frames.n_codebooks;
    if (qn == 0) throw ContractError("decode_output: frames carry no channels");
    DecodedAudio out;
    if (trace.termination == Termination::EOA) {
        out.grid = delay_decode(trace.frames, qn, pad);
        return out;
    }
    const size_t total = trace.frames.steps();
    const size_t n = total + 1 >= qn ? total + 1 - qn : 0;
    out.dropped_steps = total - n;
    out.grid = TokenGrid(n, qn);
    for (size_t t = 0; t < total; ++t) {
        for (size_t q = 0; q < qn; ++q) {
            const int32_t tk = trace.frames.at(t, q);
            if (t < q) {
                if (tk != pad) {
                    throw LayoutError(strformat(
                        "decode_output: token in a pad corner at step %zu, channel %zu", t + 1,
                        q + 1));
                }
                continue;
            }
            const size_t row = t - q;
            if (row >= n) continue;
            if (tk == pad) {
                throw LayoutError(strformat(
                    "decode_output: pad inside the pattern at step %zu, channel %zu", t + 1,
                    q + 1));
            }
            out.grid.at(row, q) = tk;
        }
    }
    return out;
}

inline nlohmann::json trace_to_json(const GenTrace& t) {
    nlohmann::json j;
    j["text"] = t.text;
    nlohmann::json lat = nlohmann::json::array();
    const size_t k = t.latents.shape.empty() ? 0 : t.latents.shape[0];
    const size_t d = t.latents.shape.size() > 1 ? t.latents.shape[1] : 0;
    for (size_t i = 0; i < k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t c = 0; c < d; ++c) row.push_back(t.latents.v[i * d + c]);
        lat.push_back(std::move(row));
    }
    j["latents"] = std::move(lat);
    nlohmann::json fr = nlohmann::json::array();
    for (size_t s = 0; s < t.frames.steps(); ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t q = 0; q < t.frames.n_codebooks; ++q) row.push_back(t.frames.at(s, q));
        fr.push_back(std::move(row));
    }
    j["frames"] = std::move(fr);
    j["termination"] = termination_name(t.termination);
    j["seed"] = t.seed;
    return j;
}

inline void save_trace(const std::string& path, const GenTrace& t) {
    std::ofstream out(path);
    if (!out) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    out << trace_to_json(t).dump(2) << "\n";
    if (!out) throw IoError(strformat("failed writing trace to '%s'", path.c_str()));
}

}  // namespace planaudio
