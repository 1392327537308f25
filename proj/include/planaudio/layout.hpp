#pragma once

#include <cstdint>
#include <vector>

#include "planaudio/common.hpp"

namespace planaudio {

// Discrete audio tokens on the time-by-codebook grid, row-major in time.
struct TokenGrid {
    size_t n_steps = 0;      // N
    size_t n_codebooks = 1;  // Q
    std::vector<int32_t> tok;

    TokenGrid() = default;
    TokenGrid(size_t n, size_t q) : n_steps(n), n_codebooks(q), tok(n * q, 0) {
        if (q == 0) throw ContractError("TokenGrid: need at least one codebook");
    }

    int32_t& at(size_t n, size_t q) { return tok[n * n_codebooks + q]; }
    int32_t at(size_t n, size_t q) const { return tok[n * n_codebooks + q]; }

    bool operator==(const TokenGrid& o) const = default;

    void validate(int32_t vocab) const {
        if (tok.size() != n_steps * n_codebooks) {
            throw ShapeError("TokenGrid: token count does not match extents");
        }
        for (size_t n = 0; n < n_steps; ++n) {
            for (size_t q = 0; q < n_codebooks; ++q) {
                const int32_t t = at(n, q);
                if (t < 0 || t >= vocab) {
                    throw IndexError(strformat(
                        "TokenGrid: token %d at step %zu, channel %zu outside vocabulary of %d",
                        t, n + 1, q + 1, vocab));
                }
            }
        }
    }
};

// Delay-encoded frames: T steps of Q channels, pads in the triangular corners.
struct FrameSeq {
    size_t n_codebooks = 1;  // Q
    std::vector<int32_t> tok;

    size_t steps() const { return n_codebooks == 0 ? 0 : tok.size() / n_codebooks; }
    int32_t& at(size_t t, size_t q) { return tok[t * n_codebooks + q]; }
    int32_t at(size_t t, size_t q) const { return tok[t * n_codebooks + q]; }

    bool operator==(const FrameSeq& o) const = default;
};

// Channel q of output step t carries grid step t-q (0-based; the same rule
// as the 1-based t-(q-1) form). Steps outside [0, N) hold the pad token, so
// the encoded length is N+Q-1, except that an empty grid encodes to an empty
// sequence rather than Q-1 steps of pure padding.
inline FrameSeq delay_encode(const TokenGrid& grid, int32_t pad) {
    for (int32_t t : grid.tok) {
        if (t == pad) throw ContractError("delay_encode: pad token collides with a grid token");
    }
    FrameSeq out;
    out.n_codebooks = grid.n_codebooks;
    if (grid.n_steps == 0) return out;
    const size_t total = grid.n_steps + grid.n_codebooks - 1;
    out.tok.assign(total * grid.n_codebooks, pad);
    for (size_t t = 0; t < total; ++t) {
        for (size_t q = 0; q < grid.n_codebooks; ++q) {
            if (t >= q && t - q < grid.n_steps) {
                out.at(t, q) = grid.at(t - q, q);
            }
        }
    }
    return out;
}

// Exact inverse of delay_encode. Structural faults (pad leaking into the
// interior, a token sitting in a corner) are reported with 1-based step and
// channel numbers.
inline TokenGrid delay_decode(const FrameSeq& frames, size_t n_codebooks, int32_t pad) {
    if (n_codebooks == 0) throw ContractError("delay_decode: need at least one codebook");
    if (frames.n_codebooks != n_codebooks) {
        throw ContractError(strformat("delay_decode: frames carry %zu channels, expected %zu",
                                      frames.n_codebooks, n_codebooks));
    }
    const size_t total = frames.steps();
    if (total == 0) return TokenGrid(0, n_codebooks);
    if (total < n_codebooks) {
        throw LayoutError(strformat("delay_decode: %zu steps cannot hold %zu delayed channels",
                                    total, n_codebooks));
    }
    const size_t n = total - (n_codebooks - 1);
    TokenGrid grid(n, n_codebooks);
    for (size_t t = 0; t < total; ++t) {
        for (size_t q = 0; q < n_codebooks; ++q) {
            const bool interior = t >= q && t - q < n;
            const int32_t tk = frames.at(t, q);
            if (interior && tk == pad) {
                throw LayoutError(strformat(
                    "delay_decode: pad inside the pattern at step %zu, channel %zu", t + 1, q + 1));
            }
            if (!interior && tk != pad) {
                throw LayoutError(strformat(
                    "delay_decode: token in a pad corner at step %zu, channel %zu", t + 1, q + 1));
            }
            if (interior) grid.at(t - q, q) = tk;
        }
    }
    return grid;
}

// The four delimiters live in the reserved tail of the text vocabulary,
// in ascending id order.
struct MarkerIds {
    int32_t sot = 0, sol = 0, soa = 0, eoa = 0;

    static MarkerIds from_text_vocab(int32_t v_text) {
        if (v_text < 5) {
            throw ContractError("MarkerIds: text vocabulary too small for four reserved markers");
        }
        return {v_text - 4, v_text - 3, v_text - 2, v_text - 1};
    }
};

enum class Segment : uint8_t { TEXT, LATENT, AUDIO, SPECIAL };

// One flattened training sequence:
//   [SOT, text 1..M, SOL, K latent slots, SOA, delayed frames 1..T, EOA]
// Latent slots hold no token; their content is continuous and appears only
// at model execution time.
struct UnifiedSequence {
    struct Item {
        Segment tag;
        int32_t token = -1;          // TEXT and SPECIAL positions
        std::vector<int32_t> frame;  // AUDIO positions, Q entries
    };

    std::vector<Item> items;
    MarkerIds markers;
    size_t n_codebooks = 1;

    size_t length() const { return items.size(); }

    size_t count(Segment tag) const {
        size_t c = 0;
        for (const Item& it : items) c += it.tag == tag;
        return c;
    }

    size_t text_len() const { return count(Segment::TEXT); }
    size_t latent_count() const { return count(Segment::LATENT); }
    size_t frame_count() const { return count(Segment::AUDIO); }

    size_t marker_pos(int32_t id) const {
        for (size_t i = 0; i < items.size(); ++i) {
            if (items[i].tag == Segment::SPECIAL && items[i].token == id) return i;
        }
        throw SequenceError(strformat("sequence: marker id %d not present", id));
    }

    size_t sot_pos() const { return marker_pos(markers.sot); }
    size_t sol_pos() const { return marker_pos(markers.sol); }
    size_t soa_pos() const { return marker_pos(markers.soa); }
    size_t eoa_pos() const { return marker_pos(markers.eoa); }
};

inline UnifiedSequence frame_sequence(const std::vector<int32_t>& text, int latent_slots,
                                      const TokenGrid& grid, int32_t pad,
                                      const MarkerIds& markers) {
    if (latent_slots <= 0) throw ContractError("frame_sequence: latent slot count must be positive");
    if (text.empty()) throw ContractError("frame_sequence: text must be nonempty");
    for (int32_t t : text) {
        if (t < 0 || t >= markers.sot) {
            throw ContractError(strformat("frame_sequence: text token %d collides with markers", t));
        }
    }
    const FrameSeq frames = delay_encode(grid, pad);
    UnifiedSequence s;
    s.markers = markers;
    s.n_codebooks = grid.n_codebooks;
    s.items.reserve(text.size() + static_cast<size_t>(latent_slots) + frames.steps() + 4);
    s.items.push_back({Segment::SPECIAL, markers.sot, {}});
    for (int32_t t : text) s.items.push_back({Segment::TEXT, t, {}});
    s.items.push_back({Segment::SPECIAL, markers.sol, {}});
    for (int k = 0; k < latent_slots; ++k) s.items.push_back({Segment::LATENT, -1, {}});
    s.items.push_back({Segment::SPECIAL, markers.soa, {}});
    for (size_t t = 0; t < frames.steps(); ++t) {
        UnifiedSequence::Item it{Segment::AUDIO, -1, {}};
        it.frame.assign(frames.tok.begin() + t * grid.n_codebooks,
                        frames.tok.begin() + (t + 1) * grid.n_codebooks);
        s.items.push_back(std::move(it));
    }
    s.items.push_back({Segment::SPECIAL, markers.eoa, {}});
    return s;
}

struct SplitResult {
    std::vector<int32_t> text;
    size_t latent_slots = 0;
    TokenGrid grid;
};

// Inverse of frame_sequence, trusting only the flattened items. Walks the
// sequence left to right and insists on the exact marker/segment grammar.
// Pass the configured latent slot count to have it cross-checked; -1 skips
// that comparison.
inline SplitResult split_sequence(const UnifiedSequence& s, int32_t pad,
                                  int expected_latent_slots = -1) {
    const auto& items = s.items;
    size_t i = 0;
    auto expect_marker = [&](int32_t id, const char* name) {
        if (i >= items.size() || items[i].tag != Segment::SPECIAL || items[i].token != id) {
            throw SequenceError(strformat("sequence: expected %s at position %zu", name, i));
        }
        ++i;
    };

    expect_marker(s.markers.sot, "start-of-text");
    SplitResult out;
    while (i < items.size() && items[i].tag == Segment::TEXT) {
        out.text.push_back(items[i].token);
        ++i;
    }
    if (out.text.empty()) throw SequenceError("sequence: no text tokens after start-of-text");
    expect_marker(s.markers.sol, "start-of-latents");
    while (i < items.size() && items[i].tag == Segment::LATENT) {
        ++out.latent_slots;
        ++i;
    }
    if (out.latent_slots == 0) throw SequenceError("sequence: no latent slots");
    if (expected_latent_slots >= 0 &&
        out.latent_slots != static_cast<size_t>(expected_latent_slots)) {
        throw SequenceError(strformat("sequence: %zu latent slots present, %d declared",
                                      out.latent_slots, expected_latent_slots));
    }
    expect_marker(s.markers.soa, "start-of-audio");
    FrameSeq frames;
    frames.n_codebooks = s.n_codebooks;
    while (i < items.size() && items[i].tag == Segment::AUDIO) {
        if (items[i].frame.size() != s.n_codebooks) {
            throw SequenceError(strformat("sequence: frame at position %zu has %zu channels", i,
                                          items[i].frame.size()));
        }
        frames.tok.insert(frames.tok.end(), items[i].frame.begin(), items[i].frame.end());
        ++i;
    }
    expect_marker(s.markers.eoa, "end-of-audio");
    if (i != items.size()) {
        throw SequenceError(strformat("sequence: trailing content after end-of-audio at %zu", i));
    }
    out.grid = delay_decode(frames, s.n_codebooks, pad);
    return out;
}

}  // namespace planaudio
