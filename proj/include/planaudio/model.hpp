#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/graph.hpp"
#include "planaudio/layout.hpp"
#include "planaudio/optim.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

// Decoder-only causal transformer over the unified sequence. Three input
// families share one backbone: a text/marker embedding table, summed
// per-codebook audio embeddings (pad has its own row), and a linear adapter
// that lifts semantic vectors into latent slots. Outputs are read through a
// shared semantic projection and one classification head per codebook; the
// first codebook's head carries one extra class that announces the end of
// the audio stream.
struct ModelConfig {
    size_t d_model = 128;
    size_t n_layers = 4;
    size_t n_heads = 4;
    size_t d_ff = 512;
    int32_t v_text = 77;
    int32_t v_audio = 64;
    size_t n_codebooks = 4;
    size_t d_sem = 32;
    size_t latent_slots = 6;
    size_t max_positions = 128;

    void validate() const {
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || n_codebooks == 0 ||
            d_sem == 0 || latent_slots == 0 || max_positions == 0 || v_text <= 0 || v_audio <= 0) {
            throw ContractError("ModelConfig: every extent must be positive");
        }
        if (d_model % n_heads != 0) {
            throw ContractError(strformat("ModelConfig: d_model %zu not divisible by %zu heads",
                                          d_model, n_heads));
        }
        if (v_text < 5) throw ContractError("ModelConfig: text vocabulary too small for markers");
    }

    int32_t pad_id() const { return v_audio; }
    // Stream-end sentinel class, present only in codebook 1's head.
    int32_t stop_class() const { return v_audio + 1; }
    size_t audio_classes() const { return static_cast<size_t>(v_audio) + 1; }
    size_t head_width(size_t q) const { return audio_classes() + (q == 0 ? 1 : 0); }
    MarkerIds markers() const { return MarkerIds::from_text_vocab(v_text); }

    // Closed-form scalar parameter count; tests compare it against the store
    // to catch silent duplication or omission.
    size_t param_scalar_count() const {
        const size_t d = d_model, f = d_ff;
        size_t total = 0;
        total += static_cast<size_t>(v_text) * d;   // text table
        total += max_positions * d;                 // positions
        total += n_codebooks * (audio_classes()) * d;  // codebook tables (tokens + pad)
        total += d_sem * d + d + d_sem;             // latent adapter + start vector
        total += n_layers * (4 * d * d + 3 * d + 2 * d + d * f + f + f * d + d + 2 * d);
        total += 2 * d;                             // final norm
        total += d * d_sem + d_sem;                 // semantic projection
        for (size_t q = 0; q < n_codebooks; ++q) total += d * head_width(q) + head_width(q);
        return total;
    }
};

// One backbone input position. latent_feed selects what enters a latent
// slot: -1 is the learned start vector, k >= 0 is row k of the feed matrix.
struct InputPlan {
    struct Pos {
        Segment tag;
        int32_t token = -1;          // TEXT / SPECIAL
        std::vector<int32_t> frame;  // AUDIO
        int latent_feed = -2;        // LATENT
    };
    std::vector<Pos> pos;

    size_t size() const { return pos.size(); }
};

// Teacher-forced layout: latent slot k is fed row k-1 of the feed matrix
// (the preceding ground-truth semantic vector), slot 0 the start vector.
inline InputPlan plan_from_sequence(const UnifiedSequence& s) {
    InputPlan plan;
    plan.pos.reserve(s.length());
    int next_feed = -1;
    for (const auto& item : s.items) {
        InputPlan::Pos p;
        p.tag = item.tag;
        switch (item.tag) {
            case Segment::TEXT:
            case Segment::SPECIAL:
                p.token = item.token;
                break;
            case Segment::AUDIO:
                p.frame = item.frame;
                break;
            case Segment::LATENT:
                p.latent_feed = next_feed++;
                break;
        }
        plan.pos.push_back(std::move(p));
    }
    return plan;
}

struct BackboneResult {
    int input_matrix = -1;  // node: L x d_model, before any block
    int hidden = -1;        // node: L x d_model, after the final norm
};

// Node handles for a full teacher-forced pass.
struct ForwardResult {
    int hidden = -1;
    int latent_hidden = -1;          // K x d_model at the latent slots
    int latent_pred = -1;            // K x d_sem read one position earlier
    std::vector<int> audio_logits;   // per codebook: T x head_width(q)
    int stop_logits = -1;            // 1 x head_width(0), read at the last audio-segment position
    size_t frames = 0;
};

// Value-level outputs (detached from the graph). audio_logits is uniform at
// audio_classes() columns; codebook 1's extra stop column is exposed only
// through stop_logits.
struct ModelOutput {
    Tensor latent_hidden;
    Tensor latent_pred;
    std::vector<Tensor> audio_logits;
    Tensor stop_logits;
};

class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "model-init"));
        const size_t d = cfg_.d_model;
        auto w = [&](const std::string& name, std::vector<size_t> shape) {
            store_.add(name, Tensor::randn(shape, rng, 0.02));
        };
        auto zeros = [&](const std::string& name, std::vector<size_t> shape) {
            store_.add(name, Tensor::zeros(shape));
        };
        auto ones = [&](const std::string& name, std::vector<size_t> shape) {
            store_.add(name, Tensor::full(shape, 1.0));
        };
        w("text_embed", {static_cast<size_t>(cfg_.v_text), d});
        w("pos_embed", {cfg_.max_positions, d});
        for (size_t q = 0; q < cfg_.n_codebooks; ++q) {
            w(strformat("codebook%02zu.embed", q), {cfg_.audio_classes(), d});
        }
        w("latent_adapter.w", {cfg_.d_sem, d});
        zeros("latent_adapter.b", {d});
        w("latent_start", {1, cfg_.d_sem});
        for (size_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = strformat("layer%02zu.", l);
            ones(p + "ln1_gain", {d});
            zeros(p + "ln1_bias", {d});
            w(p + "attn_wq", {d, d});
            zeros(p + "attn_bq", {d});
            // No key bias: softmax normalization cancels it exactly, leaving
            // a parameter with an identically zero gradient.
            w(p + "attn_wk", {d, d});
            w(p + "attn_wv", {d, d});
            zeros(p + "attn_bv", {d});
            w(p + "attn_wo", {d, d});
            zeros(p + "attn_bo", {d});
            ones(p + "ln2_gain", {d});
            zeros(p + "ln2_bias", {d});
            w(p + "mlp_w1", {d, cfg_.d_ff});
            zeros(p + "mlp_b1", {cfg_.d_ff});
            w(p + "mlp_w2", {cfg_.d_ff, d});
            zeros(p + "mlp_b2", {d});
        }
        ones("final_ln_gain", {d});
        zeros("final_ln_bias", {d});
        w("phi.w", {d, cfg_.d_sem});
        zeros("phi.b", {cfg_.d_sem});
        for (size_t q = 0; q < cfg_.n_codebooks; ++q) {
            w(strformat("audio_head%02zu.w", q), {d, cfg_.head_width(q)});
            zeros(strformat("audio_head%02zu.b", q), {cfg_.head_width(q)});
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // Run the backbone over an arbitrary position plan. latent_feed supplies
    // the semantic vectors entering latent slots 1.. (slot 0 always takes the
    // learned start vector); pass nullptr when the plan needs no feed rows.
    BackboneResult backbone(Graph& g, const InputPlan& plan, const Tensor* latent_feed) const {
        const size_t len = plan.size();
        if (len == 0) throw ContractError("backbone: empty input plan");
        if (len > cfg_.max_positions) {
            throw ContractError(strformat("backbone: %zu positions exceed the %zu limit", len,
                                          cfg_.max_positions));
        }
        const size_t d = cfg_.d_model;

        std::vector<int64_t> text_ids(len, -1);
        std::vector<std::vector<int64_t>> frame_ids(cfg_.n_codebooks,
                                                    std::vector<int64_t>(len, -1));
        std::vector<size_t> latent_pos;
        for (size_t i = 0; i < len; ++i) {
            const auto& p = plan.pos[i];
            switch (p.tag) {
                case Segment::TEXT:
                case Segment::SPECIAL:
                    if (p.token < 0) throw IndexError("backbone: negative token id");
                    text_ids[i] = p.token;
                    break;
                case Segment::AUDIO:
                    if (p.frame.size() != cfg_.n_codebooks) {
                        throw ShapeError(strformat("backbone: frame at position %zu has %zu channels",
                                                   i, p.frame.size()));
                    }
                    for (size_t q = 0; q < cfg_.n_codebooks; ++q) {
                        if (p.frame[q] < 0) throw IndexError("backbone: negative audio token");
                        frame_ids[q][i] = p.frame[q];
                    }
                    break;
                case Segment::LATENT: {
                    const int expect = static_cast<int>(latent_pos.size()) - 1;
                    if (p.latent_feed != expect) {
                        throw ContractError("backbone: latent feed rows must be -1, 0, 1, ... in slot order");
                    }
                    latent_pos.push_back(i);
                    break;
                }
            }
        }

        int x = g.gather_rows(g.param("text_embed", &store_.value("text_embed")), text_ids);
        for (size_t q = 0; q < cfg_.n_codebooks; ++q) {
            const std::string name = strformat("codebook%02zu.embed", q);
            x = g.add(x, g.gather_rows(g.param(name, &store_.value(name)), frame_ids[q]));
        }
        if (!latent_pos.empty()) {
            const size_t feed_rows = latent_pos.size() - 1;
            int z_in = g.param("latent_start", &store_.value("latent_start"));
            if (feed_rows > 0) {
                if (latent_feed == nullptr ||
                    latent_feed->shape != std::vector<size_t>{feed_rows, cfg_.d_sem}) {
                    throw ContractError(strformat("backbone: latent feed must be [%zux%zu]",
                                                  feed_rows, cfg_.d_sem));
                }
                z_in = g.vstack({z_in, g.constant(*latent_feed)});
            }
            int adapted = g.add_rowvec(
                g.matmul(z_in, g.param("latent_adapter.w", &store_.value("latent_adapter.w"))),
                g.param("latent_adapter.b", &store_.value("latent_adapter.b")));
            std::vector<int64_t> scatter_to(latent_pos.begin(), latent_pos.end());
            x = g.add(x, g.scatter_rows(adapted, scatter_to, len));
        }
        x = g.add(x, g.slice_rows(g.param("pos_embed", &store_.value("pos_embed")), 0, len));

        BackboneResult out;
        out.input_matrix = x;
        const size_t dh = d / cfg_.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (size_t l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = strformat("layer%02zu.", l);
            auto P = [&](const std::string& n) { return g.param(p + n, &store_.value(p + n)); };
            int a = g.layer_norm(x, P("ln1_gain"), P("ln1_bias"));
            int qm = g.add_rowvec(g.matmul(a, P("attn_wq")), P("attn_bq"));
            int km = g.matmul(a, P("attn_wk"));
            int vm = g.add_rowvec(g.matmul(a, P("attn_wv")), P("attn_bv"));
            std::vector<int> heads;
            heads.reserve(cfg_.n_heads);
            for (size_t h = 0; h < cfg_.n_heads; ++h) {
                int qh = g.slice_cols(qm, h * dh, (h + 1) * dh);
                int kh = g.slice_cols(km, h * dh, (h + 1) * dh);
                int vh = g.slice_cols(vm, h * dh, (h + 1) * dh);
                int probs = g.causal_softmax(g.affine(g.matmul_nt(qh, kh), scale, 0.0));
                heads.push_back(g.matmul(probs, vh));
            }
            int ctx = g.add_rowvec(g.matmul(g.hstack(heads), P("attn_wo")), P("attn_bo"));
            x = g.add(x, ctx);
            int b = g.layer_norm(x, P("ln2_gain"), P("ln2_bias"));
            int m = g.add_rowvec(g.matmul(b, P("mlp_w1")), P("mlp_b1"));
            m = g.add_rowvec(g.matmul(g.gelu(m), P("mlp_w2")), P("mlp_b2"));
            x = g.add(x, m);
        }
        out.hidden = g.layer_norm(x, g.param("final_ln_gain", &store_.value("final_ln_gain")),
                                  g.param("final_ln_bias", &store_.value("final_ln_bias")));
        return out;
    }

    // Shared affine map into the semantic space, applied row-wise.
    int project_latent(Graph& g, int hidden_rows) const {
        return g.add_rowvec(g.matmul(hidden_rows, g.param("phi.w", &store_.value("phi.w"))),
                            g.param("phi.b", &store_.value("phi.b")));
    }

    // Classification head for codebook q, applied row-wise.
    int audio_head(Graph& g, int hidden_rows, size_t q) const {
        const std::string name = strformat("audio_head%02zu", q);
        return g.add_rowvec(g.matmul(hidden_rows, g.param(name + ".w", &store_.value(name + ".w"))),
                            g.param(name + ".b", &store_.value(name + ".b")));
    }

    // Teacher-forced pass over a complete unified sequence. teacher_latents
    // must hold the K ground-truth semantic vectors; rows 1..K-1 feed latent
    // slots 2..K (slot 1 takes the start vector), and predictions are read
    // one position before each slot, plus the audio and stop readouts.
    ForwardResult forward(Graph& g, const UnifiedSequence& s, const Tensor& teacher_latents) const {
        if (s.latent_count() != cfg_.latent_slots) {
            throw ContractError(strformat("forward: sequence has %zu latent slots, model expects %zu",
                                          s.latent_count(), cfg_.latent_slots));
        }
        if (teacher_latents.shape != std::vector<size_t>{cfg_.latent_slots, cfg_.d_sem}) {
            throw ContractError(strformat("forward: teacher latents must be [%zux%zu], got %s",
                                          cfg_.latent_slots, cfg_.d_sem,
                                          teacher_latents.shape_str().c_str()));
        }
        const size_t k = cfg_.latent_slots;
        Tensor feed({k - 1, cfg_.d_sem});
        std::copy_n(teacher_latents.v.begin(), (k - 1) * cfg_.d_sem, feed.v.begin());

        InputPlan plan = plan_from_sequence(s);
        BackboneResult bb = backbone(g, plan, k > 1 ? &feed : nullptr);

        ForwardResult out;
        out.hidden = bb.hidden;
        out.frames = s.frame_count();
        const size_t sol = s.sol_pos();
        const size_t soa = s.soa_pos();
        out.latent_hidden = g.slice_rows(bb.hidden, sol + 1, sol + 1 + k);
        out.latent_pred = project_latent(g, g.slice_rows(bb.hidden, sol, sol + k));
        const size_t t = out.frames;
        // Codebook 1's head also covers the position after the last frame,
        // where the stop class is the target.
        int q0 = audio_head(g, g.slice_rows(bb.hidden, soa, soa + t + 1), 0);
        out.audio_logits.push_back(g.slice_rows(q0, 0, t));
        out.stop_logits = g.slice_rows(q0, t, t + 1);
        for (size_t q = 1; q < cfg_.n_codebooks; ++q) {
            out.audio_logits.push_back(audio_head(g, g.slice_rows(bb.hidden, soa, soa + t), q));
        }
        return out;
    }

    // Detach a forward pass into plain tensors, trimming codebook 1's logits
    // to the uniform class count.
    ModelOutput materialize(const Graph& g, const ForwardResult& r) const {
        ModelOutput out;
        out.latent_hidden = g.value(r.latent_hidden);
        out.latent_pred = g.value(r.latent_pred);
        out.stop_logits = g.value(r.stop_logits);
        const size_t classes = cfg_.audio_classes();
        for (size_t q = 0; q < cfg_.n_codebooks; ++q) {
            const Tensor& full = g.value(r.audio_logits[q]);
            if (q == 0) {
                Tensor trimmed({full.shape[0], classes});
                for (size_t i = 0; i < full.shape[0]; ++i) {
                    std::copy_n(full.v.data() + i * full.shape[1], classes,
                                trimmed.v.data() + i * classes);
                }
                out.audio_logits.push_back(std::move(trimmed));
            } else {
                out.audio_logits.push_back(full);
            }
        }
        return out;
    }

private:
    ModelConfig cfg_;
    ParamStore store_;
};

}  // namespace planaudio
