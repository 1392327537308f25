#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "planaudio/layout.hpp"
#include "planaudio/rng.hpp"

using namespace planaudio;

namespace {

constexpr int32_t kPad = 100;  // toy codebook vocabulary is [0, 100)

TokenGrid random_grid(size_t n, size_t q, Rng& rng) {
    TokenGrid g(n, q);
    for (int32_t& t : g.tok) t = static_cast<int32_t>(rng.uniform_int(100));
    return g;
}

}  // namespace

TEST_CASE("empty grid encodes to an empty frame sequence") {
    TokenGrid g(0, 3);
    FrameSeq f = delay_encode(g, kPad);
    REQUIRE(f.steps() == 0);
    REQUIRE(delay_decode(f, 3, kPad) == g);
}

TEST_CASE("single codebook encodes with no delay") {
    TokenGrid g(5, 1);
    for (size_t n = 0; n < 5; ++n) g.at(n, 0) = static_cast<int32_t>(n * 7);
    FrameSeq f = delay_encode(g, kPad);
    REQUIRE(f.steps() == 5);
    for (size_t t = 0; t < 5; ++t) REQUIRE(f.at(t, 0) == g.at(t, 0));
}

TEST_CASE("three-codebook two-step grid matches the enumerated pattern") {
    // grid[n][q] = 10n + q with 1-based n, q
    TokenGrid g(2, 3);
    for (size_t n = 0; n < 2; ++n) {
        for (size_t q = 0; q < 3; ++q) g.at(n, q) = static_cast<int32_t>(10 * (n + 1) + (q + 1));
    }
    FrameSeq f = delay_encode(g, kPad);
    REQUIRE(f.steps() == 4);
    const int32_t P = kPad;
    const std::vector<int32_t> expected{11, P, P, 21, 12, P, P, 22, 13, P, P, 23};
    REQUIRE(f.tok == expected);
    REQUIRE(delay_decode(f, 3, kPad) == g);
}

TEST_CASE("delay round-trip is the identity over random grids") {
    Rng rng(derive_seed(2024, "delay-roundtrip"));
    int cases = 0;
    for (size_t q = 1; q <= 8; ++q) {
        for (int rep = 0; rep < 130; ++rep) {
            const size_t n = rng.uniform_int(65);
            TokenGrid g = random_grid(n, q, rng);
            FrameSeq f = delay_encode(g, kPad);
            if (n >= 1) REQUIRE(f.steps() == n + q - 1);
            if (n >= q) {
                size_t pads = 0;
                for (int32_t t : f.tok) pads += t == kPad;
                REQUIRE(pads == q * (q - 1));
            }
            REQUIRE(delay_decode(f, q, kPad) == g);
            ++cases;
        }
    }
    REQUIRE(cases >= 1000);
}

TEST_CASE("decode rejects a token parked in a pad corner") {
    Rng rng(derive_seed(1, "corner"));
    TokenGrid g = random_grid(3, 3, rng);
    FrameSeq f = delay_encode(g, kPad);
    f.at(0, 1) = 42;  // 1-based (t=1, q=2): first step of the second channel is a corner
    try {
        delay_decode(f, 3, kPad);
        FAIL("expected a layout error");
    } catch (const LayoutError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("step 1") != std::string::npos);
        REQUIRE(msg.find("channel 2") != std::string::npos);
    }
}

TEST_CASE("decode rejects pad leaking into the interior") {
    Rng rng(derive_seed(2, "interior"));
    TokenGrid g = random_grid(4, 2, rng);
    FrameSeq f = delay_encode(g, kPad);
    f.at(2, 0) = kPad;  // 1-based (t=3, q=1) is interior for N=4, Q=2
    try {
        delay_decode(f, 2, kPad);
        FAIL("expected a layout error");
    } catch (const LayoutError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("step 3") != std::string::npos);
        REQUIRE(msg.find("channel 1") != std::string::npos);
    }
}

TEST_CASE("encode refuses a grid token equal to the pad id") {
    TokenGrid g(2, 2);
    g.at(1, 1) = kPad;
    REQUIRE_THROWS_AS(delay_encode(g, kPad), ContractError);
}

TEST_CASE("framing produces the documented length and tag histogram") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    Rng rng(derive_seed(3, "framing"));
    TokenGrid g = random_grid(10, 4, rng);
    const std::vector<int32_t> text{5, 17, 80};
    UnifiedSequence s = frame_sequence(text, 6, g, kPad, markers);
    REQUIRE(s.length() == 3 + 6 + 13 + 4);
    REQUIRE(s.text_len() == 3);
    REQUIRE(s.latent_count() == 6);
    REQUIRE(s.frame_count() == 13);
    REQUIRE(s.count(Segment::SPECIAL) == 4);
    REQUIRE(s.sot_pos() == 0);
    REQUIRE(s.sol_pos() == 4);
    REQUIRE(s.soa_pos() == 11);
    REQUIRE(s.eoa_pos() == s.length() - 1);
}

TEST_CASE("empty audio leaves start-of-audio and end-of-audio adjacent") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    UnifiedSequence s = frame_sequence({1, 2}, 4, TokenGrid(0, 4), kPad, markers);
    REQUIRE(s.soa_pos() + 1 == s.eoa_pos());
    REQUIRE(s.frame_count() == 0);
}

TEST_CASE("framing validates latent count and text content") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    TokenGrid g(1, 2);
    REQUIRE_THROWS_AS(frame_sequence({1}, 0, g, kPad, markers), ContractError);
    REQUIRE_THROWS_AS(frame_sequence({1}, -2, g, kPad, markers), ContractError);
    REQUIRE_THROWS_AS(frame_sequence({}, 4, g, kPad, markers), ContractError);
    REQUIRE_THROWS_AS(frame_sequence({96}, 4, g, kPad, markers), ContractError);  // marker id
}

TEST_CASE("framing and splitting round-trip over random inputs") {
    const MarkerIds markers = MarkerIds::from_text_vocab(64);
    Rng rng(derive_seed(4, "frame-roundtrip"));
    for (int rep = 0; rep < 1000; ++rep) {
        const size_t m = 1 + rng.uniform_int(12);
        const int k = 1 + static_cast<int>(rng.uniform_int(8));
        const size_t n = rng.uniform_int(30);
        const size_t q = 1 + rng.uniform_int(6);
        std::vector<int32_t> text(m);
        for (int32_t& t : text) t = static_cast<int32_t>(rng.uniform_int(60));
        TokenGrid g = random_grid(n, q, rng);
        UnifiedSequence s = frame_sequence(text, k, g, kPad, markers);
        SplitResult r = split_sequence(s, kPad, k);
        REQUIRE(r.text == text);
        REQUIRE(r.latent_slots == static_cast<size_t>(k));
        REQUIRE(r.grid == g);
    }
}

TEST_CASE("deleting any single marker is detected") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    Rng rng(derive_seed(5, "marker-deletion"));
    TokenGrid g = random_grid(6, 3, rng);
    const UnifiedSequence base = frame_sequence({9, 8, 7}, 5, g, kPad, markers);
    for (int32_t id : {markers.sot, markers.sol, markers.soa, markers.eoa}) {
        UnifiedSequence s = base;
        s.items.erase(s.items.begin() + static_cast<long>(base.marker_pos(id)));
        REQUIRE_THROWS_AS(split_sequence(s, kPad), SequenceError);
    }
}

TEST_CASE("latent slot count mismatch against the declared count is detected") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    TokenGrid g(2, 2);
    g.at(0, 0) = 1;
    g.at(0, 1) = 2;
    g.at(1, 0) = 3;
    g.at(1, 1) = 4;
    UnifiedSequence s = frame_sequence({3}, 5, g, kPad, markers);
    REQUIRE_NOTHROW(split_sequence(s, kPad, 5));
    REQUIRE_THROWS_AS(split_sequence(s, kPad, 6), SequenceError);
}

TEST_CASE("trailing garbage after the end marker is detected") {
    const MarkerIds markers = MarkerIds::from_text_vocab(100);
    TokenGrid g(1, 2);
    g.at(0, 0) = 1;
    g.at(0, 1) = 2;
    UnifiedSequence s = frame_sequence({3}, 2, g, kPad, markers);
    s.items.push_back({Segment::TEXT, 4, {}});
    REQUIRE_THROWS_AS(split_sequence(s, kPad), SequenceError);
}

TEST_CASE("grid validation names the offending token") {
    TokenGrid g(2, 2);
    g.at(1, 0) = 100;
    REQUIRE_THROWS_AS(g.validate(100), IndexError);
    g.at(1, 0) = 99;
    REQUIRE_NOTHROW(g.validate(100));
}
