#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/graph.hpp"
#include "planaudio/layout.hpp"
#include "planaudio/model.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/toyworld.hpp"
#include "planaudio/train.hpp"

namespace planaudio {

// Self-contained health checks behind the `verify` command. Each suite is
// independent, deterministic, and fast enough to run before every training
// session.
struct SuiteResult {
    std::string name;
    bool passed = false;
    double seconds = 0.0;
    std::string detail;
};

struct VerifyReport {
    std::vector<SuiteResult> suites;

    bool all_passed() const {
        for (const SuiteResult& s : suites)
            if (!s.passed) return false;
        return true;
    }
};

namespace detail {

// Central difference of the loss with respect to one parameter entry. The
// parameter tensors are bound into the graph by pointer, so poking the store
// and recomputing replays the whole tape at the shifted point.
inline double fd_slope(Graph& g, int loss, Tensor& storage, size_t idx, double h) {
    const double keep = storage.v[idx];
    storage.v[idx] = keep + h;
    g.recompute();
    const double lp = g.value(loss).item();
    storage.v[idx] = keep - h;
    g.recompute();
    const double lm = g.value(loss).item();
    storage.v[idx] = keep;
    return (lp - lm) / (2.0 * h);
}

struct FdWorst {
    double err = 0.0;
    std::string tensor;
    size_t index = 0;
    size_t coords = 0;
};

// Max relative error between autodiff and finite differences over a spread
// of coordinates in every parameter tensor. backward() must already have
// filled the gradients that are being judged.
inline FdWorst fd_sweep(Graph& g, int loss, Model& model, double h) {
    FdWorst worst;
    for (const auto& [name, tensor] : model.params().values()) {
        int node = -1;
        try {
            node = g.find_param(name);
        } catch (const IndexError&) {
            continue;  // parameter not used by this graph
        }
        const Tensor& analytic = g.grad(node);
        Tensor& storage = model.params().value(name);
        if (analytic.numel() != storage.numel()) continue;
        const size_t n = storage.numel();
        size_t picks[3] = {0, n / 2, n - 1};
        size_t used = 0;
        for (size_t p = 0; p < 3; ++p) {
            bool dup = false;
            for (size_t q = 0; q < p; ++q) dup = dup || picks[q] == picks[p];
            if (dup) continue;
            ++used;
            const size_t idx = picks[p];
            const double numeric = fd_slope(g, loss, storage, idx, h);
            const double a = analytic.v[idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            if (err > worst.err) {
                worst.err = err;
                worst.tensor = name;
                worst.index = idx;
            }
        }
        worst.coords += used;
    }
    g.recompute();
    return worst;
}

}  // namespace detail

struct NumericsCheck {
    double max_rel_err = 0.0;
    size_t coords = 0;
    double seconds = 0.0;
    std::string worst_tensor;
    size_t worst_index = 0;
};

// Autodiff versus central differences on a reduced model (d_model 16, two
// layers, two latent slots, two codebooks): teacher-forced loss on one
// synthetic record, sampled coordinates of every parameter. fault_factor
// scales the Gelu backward contribution; 1.0 judges the real gradients and
// anything else plants a detectable lie.
inline NumericsCheck numerics_gradient_check(double fault_factor = 1.0) {
    const auto t0 = std::chrono::steady_clock::now();

    WorldConfig wcfg;
    wcfg.n_event_types = 4;
    wcfg.n_words = 6;
    wcfg.v_audio = 32;
    wcfg.n_codebooks = 2;
    wcfg.d_sem = 4;
    wcfg.latent_slots = 2;
    wcfg.max_frames = 32;
    wcfg.min_event_dur = 2;
    wcfg.max_event_dur = 4;
    wcfg.clean_dur = 2;
    wcfg.seed = 11;
    ToyWorld world(wcfg);

    ModelConfig mcfg;
    mcfg.d_model = 16;
    mcfg.n_layers = 2;
    mcfg.n_heads = 2;
    mcfg.d_ff = 32;
    mcfg.v_text = world.v_text();
    mcfg.v_audio = wcfg.v_audio;
    mcfg.n_codebooks = wcfg.n_codebooks;
    mcfg.d_sem = wcfg.d_sem;
    mcfg.latent_slots = wcfg.latent_slots;
    mcfg.max_positions = 64;
    Model model(mcfg, 301);

    Rng rec_rng(derive_seed(wcfg.seed, "verify-record"));
    const Record rec = make_record(world, 0, Scenario::Composite, rec_rng);

    Graph g;
    const UnifiedSequence seq =
        frame_sequence(rec.text, mcfg.latent_slots, rec.grid, mcfg.pad_id(), mcfg.markers());
    const ForwardResult fr = model.forward(g, seq, rec.semantic);
    const int l_latent = latent_loss_node(g, fr.latent_pred, rec.semantic, 1.0);
    const FrameSeq frames = delay_encode(rec.grid, mcfg.pad_id());
    const int l_audio = audio_stop_loss_node(g, model, fr, frames);
    const int loss = g.add(l_latent, l_audio);

    g.set_gradient_fault(fault_factor);
    g.backward(loss);
    const detail::FdWorst judged = detail::fd_sweep(g, loss, model, 1e-5);

    NumericsCheck check;
    check.max_rel_err = judged.err;
    check.coords = judged.coords;
    check.worst_tensor = judged.tensor;
    check.worst_index = judged.index;
    check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return check;
}

// Gradient suite: the clean sweep must agree with finite differences, and a
// planted 2x backward fault must push the error past 0.3 or the comparison
// is too blunt to trust. inject_backward_fault judges the faulted gradients
// instead, which is expected to fail; the command maps that to exit code 2.
inline SuiteResult verify_numerics(bool inject_backward_fault = false) {
    SuiteResult res;
    res.name = "numerics";
    const auto t0 = std::chrono::steady_clock::now();

    const NumericsCheck judged = numerics_gradient_check(inject_backward_fault ? 2.0 : 1.0);

    if (inject_backward_fault) {
        res.passed = judged.max_rel_err < 1e-3;
        res.detail = strformat(
            "max rel err %.3e at %s[%zu] over %zu coords with 2x backward fault injected",
            judged.max_rel_err, judged.worst_tensor.c_str(), judged.worst_index, judged.coords);
    } else {
        const NumericsCheck control = numerics_gradient_check(2.0);
        res.passed = judged.max_rel_err < 1e-3 && control.max_rel_err > 0.3;
        res.detail = strformat(
            "max rel err %.3e at %s[%zu] over %zu coords, planted-fault control err %.3f",
            judged.max_rel_err, judged.worst_tensor.c_str(), judged.worst_index, judged.coords,
            control.max_rel_err);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// Round-trip fuzz over the delayed layout and the flattened sequence
// grammar: random grids encode to the expected length and pad census,
// decode back bit-exactly, and survive the frame/split round trip.
inline SuiteResult verify_layout(size_t n_grids = 1000) {
    SuiteResult res;
    res.name = "layout";
    const auto t0 = std::chrono::steady_clock::now();

    const int32_t v_tok = 16;
    const int32_t pad = v_tok;
    const int32_t v_text = 20;
    const MarkerIds markers = MarkerIds::from_text_vocab(v_text);
    Rng rng(derive_seed(0x1a70u, "layout-fuzz"));

    size_t failures = 0;
    std::string first_failure;
    auto flag = [&](size_t i, size_t n, size_t q, const char* what) {
        ++failures;
        if (first_failure.empty())
            first_failure = strformat("case %zu (N=%zu Q=%zu): %s", i, n, q, what);
    };

    for (size_t i = 0; i < n_grids; ++i) {
        const size_t q_ch = 1 + static_cast<size_t>(rng.uniform_int(8));
        const size_t n_steps = static_cast<size_t>(rng.uniform_int(65));
        TokenGrid grid(n_steps, q_ch);
        for (size_t t = 0; t < n_steps; ++t)
            for (size_t q = 0; q < q_ch; ++q)
                grid.at(t, q) = static_cast<int32_t>(rng.uniform_int(v_tok));

        const FrameSeq frames = delay_encode(grid, pad);
        const size_t want_steps = n_steps == 0 ? 0 : n_steps + q_ch - 1;
        if (frames.steps() != want_steps) {
            flag(i, n_steps, q_ch, "encoded length");
            continue;
        }
        size_t pads = 0;
        for (size_t t = 0; t < frames.steps(); ++t)
            for (size_t q = 0; q < q_ch; ++q) pads += frames.at(t, q) == pad ? 1 : 0;
        const size_t want_pads = n_steps == 0 ? 0 : q_ch * (q_ch - 1);
        if (pads != want_pads) {
            flag(i, n_steps, q_ch, "pad census");
            continue;
        }
        if (delay_decode(frames, q_ch, pad) != grid) {
            flag(i, n_steps, q_ch, "decode round trip");
            continue;
        }

        std::vector<int32_t> text(1 + rng.uniform_int(6));
        for (int32_t& tok : text) tok = static_cast<int32_t>(rng.uniform_int(v_text - 4));
        const int slots = 1 + static_cast<int>(rng.uniform_int(4));
        const UnifiedSequence seq = frame_sequence(text, slots, grid, pad, markers);
        const SplitResult split = split_sequence(seq, pad, slots);
        if (split.text != text || split.grid != grid ||
            split.latent_slots != static_cast<size_t>(slots)) {
            flag(i, n_steps, q_ch, "frame/split round trip");
        }
    }

    res.passed = failures == 0;
    res.detail = failures == 0
                     ? strformat("%zu grids, N in [0,64], Q in [1,8], all round trips exact",
                                 n_grids)
                     : strformat("%zu of %zu grids failed; first: %s", failures, n_grids,
                                 first_failure.c_str());
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// Draw-frequency audit of every curriculum preset at every stage: 50k draws
// per stage must sit within 0.02 of the declared mixture, pass a chi-square
// test on the supported categories, and put nothing on zero-weight
// scenarios. The disjoint preset's final stage must be pure Composite.
inline SuiteResult verify_curriculum(size_t draws = 50000) {
    SuiteResult res;
    res.name = "curriculum";
    const auto t0 = std::chrono::steady_clock::now();

    // Upper chi-square quantiles at p = 1e-4 for 1 and 2 degrees of freedom.
    const double chi2_cut[3] = {0.0, 15.137, 18.421};
    const char* presets[3] = {"constant", "gradual", "disjoint"};
    const size_t total_epochs = 50;

    double max_dev = 0.0;
    size_t failures = 0;
    std::string first_failure;
    auto flag = [&](const char* preset, size_t stage, const std::string& what) {
        ++failures;
        if (first_failure.empty())
            first_failure = strformat("%s stage %zu: %s", preset, stage, what.c_str());
    };

    for (const char* preset : presets) {
        const CurriculumSchedule schedule = CurriculumSchedule::preset(preset, total_epochs);
        for (size_t si = 0; si < schedule.stages.size(); ++si) {
            const CurriculumStage& stage = schedule.stages[si];
            Rng rng(derive_seed(0xcc, preset, si));
            size_t counts[3] = {0, 0, 0};
            for (size_t d = 0; d < draws; ++d)
                ++counts[static_cast<size_t>(curriculum_draw(schedule, stage.begin, rng))];

            double chi2 = 0.0;
            size_t supported = 0;
            for (size_t s = 0; s < 3; ++s) {
                const double w = stage.weights[s];
                const double freq = static_cast<double>(counts[s]) / draws;
                max_dev = std::max(max_dev, std::abs(freq - w));
                if (std::abs(freq - w) > 0.02)
                    flag(preset, si, strformat("scenario %zu freq %.4f vs weight %.4f", s, freq, w));
                if (w > 0.0) {
                    ++supported;
                    const double expected = w * static_cast<double>(draws);
                    chi2 += (counts[s] - expected) * (counts[s] - expected) / expected;
                } else if (counts[s] != 0) {
                    flag(preset, si, strformat("%zu draws on zero-weight scenario %zu",
                                               counts[s], s));
                }
            }
            if (supported >= 2 && chi2 > chi2_cut[supported - 1])
                flag(preset, si, strformat("chi-square %.2f exceeds %.2f", chi2,
                                           chi2_cut[supported - 1]));
        }

        if (std::string(preset) == "disjoint") {
            const CurriculumStage& last = schedule.stages.back();
            Rng rng(derive_seed(0xcc, "disjoint-final"));
            size_t composite = 0;
            for (size_t d = 0; d < draws; ++d)
                composite += curriculum_draw(schedule, last.begin, rng) == Scenario::Composite;
            if (composite != draws)
                flag(preset, schedule.stages.size() - 1,
                     strformat("final stage drew %zu of %zu Composite", composite, draws));
        }
    }

    res.passed = failures == 0;
    res.detail = failures == 0
                     ? strformat("3 presets, %zu draws per stage, max deviation %.4f", draws,
                                 max_dev)
                     : strformat("%zu checks failed; first: %s", failures, first_failure.c_str());
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline VerifyReport run_verification(bool inject_backward_fault = false) {
    VerifyReport report;
    report.suites.push_back(verify_numerics(inject_backward_fault));
    report.suites.push_back(verify_layout());
    report.suites.push_back(verify_curriculum());
    return report;
}

}  // namespace planaudio
