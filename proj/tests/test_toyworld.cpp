#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "planaudio/rng.hpp"
#include "planaudio/toyworld.hpp"

using namespace planaudio;

namespace {

// First Q-tuple, scanning upward from all zeros, that the world's motif
// table does not contain. Used to fabricate guaranteed-noise frames.
std::vector<int32_t> noise_tuple(const ToyWorld& world, int skip = 0) {
    const auto& cfg = world.config();
    for (int32_t c = 0;; ++c) {
        std::vector<int32_t> tuple(cfg.n_codebooks);
        for (size_t q = 0; q < cfg.n_codebooks; ++q)
            tuple[q] = (c + static_cast<int32_t>(q)) % cfg.v_audio;
        if (!world.invert(tuple)) {
            if (skip == 0) return tuple;
            --skip;
        }
    }
}

void put_tuple(TokenGrid& grid, size_t frame, const std::vector<int32_t>& tuple) {
    for (size_t q = 0; q < grid.n_codebooks; ++q) grid.at(frame, q) = tuple[q];
}

PromptSpec sound_spec(std::vector<std::pair<int, int>> events, std::vector<bool> overlaps) {
    PromptSpec spec;
    spec.scenario = Scenario::Sound;
    for (auto [id, dur] : events) spec.events.push_back({id, dur});
    spec.overlaps = std::move(overlaps);
    return spec;
}

}  // namespace

TEST_CASE("default world exposes the expected text vocabulary") {
    ToyWorld world{WorldConfig{}};
    REQUIRE(world.v_text() == 77);
    MarkerIds m = world.markers();
    REQUIRE(m.sot == 73);
    REQUIRE(m.sol == 74);
    REQUIRE(m.soa == 75);
    REQUIRE(m.eoa == 76);

    REQUIRE(world.token_name(m.eoa) == "<eoa>");
    REQUIRE(world.token_name(world.token_id("then")) == "then");
    REQUIRE(world.token_name(world.token_id("clean")) == "clean");
    REQUIRE(world.token_name(world.token_id("e16")) == "e16");
    REQUIRE(world.token_name(world.token_id("w01")) == "w01");
    REQUIRE(world.token_name(world.token_id("w32")) == "w32");
    REQUIRE_THROWS_AS(world.token_id("zebra"), ContractError);
    REQUIRE_THROWS_AS(world.token_name(77), IndexError);

    std::vector<int32_t> ids = world.tokenize("play w03 then e02");
    REQUIRE(world.detokenize(ids) == "play w03 then e02");

    REQUIRE(world.item_count() == 49);
    REQUIRE(world.word_item_base() == 17);
    REQUIRE(world.item_name(0) == "clean");
    REQUIRE(world.item_name(17) == "w01");
}

TEST_CASE("motif table inverts every entry and is deterministic") {
    WorldConfig cfg;
    ToyWorld world(cfg);
    for (int item = 0; item < world.item_count(); ++item) {
        for (int j = 0; j < world.motif_table_depth(); ++j) {
            std::vector<int32_t> tuple = world.motif_frame(item, j);
            for (int32_t t : tuple) {
                REQUIRE(t >= 0);
                REQUIRE(t < cfg.v_audio);
            }
            auto hit = world.invert(tuple);
            REQUIRE(hit.has_value());
            REQUIRE(hit->first == item);
            REQUIRE(hit->second == j);
        }
    }

    ToyWorld again(cfg);
    REQUIRE(again.hash_seed() == world.hash_seed());
    REQUIRE(again.motif_frame(5, 3) == world.motif_frame(5, 3));
    for (int item = 0; item < world.item_count(); ++item) {
        const Tensor& a = world.item_embedding(item);
        const Tensor& b = again.item_embedding(item);
        REQUIRE(a.v == b.v);
        double norm = 0.0;
        for (double x : a.v) norm += x * x;
        REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-12));
    }

    WorldConfig other = cfg;
    other.seed = cfg.seed + 1;
    ToyWorld shifted(other);
    REQUIRE(shifted.hash_seed() != world.hash_seed());

    REQUIRE_THROWS_AS(world.motif_frame(49, 0), IndexError);
    REQUIRE_THROWS_AS(world.motif_frame(0, 12), IndexError);
}

TEST_CASE("world construction fails when no injective table can exist") {
    WorldConfig tiny;
    tiny.n_event_types = 1;
    tiny.n_words = 1;
    tiny.v_audio = 4;
    tiny.n_codebooks = 1;
    tiny.min_event_dur = 4;
    tiny.max_event_dur = 4;
    // 3 items x 4 steps = 12 pairs cannot fit injectively into 4 tuples.
    REQUIRE_THROWS_AS(ToyWorld(tiny), ContractError);
}

TEST_CASE("sampled prompts respect the scenario taxonomy") {
    ToyWorld world{WorldConfig{}};
    const WorldConfig& cfg = world.config();
    Rng rng(801);

    std::set<size_t> sound_counts;
    bool saw_overlap = false, saw_plain = false;
    for (int rep = 0; rep < 300; ++rep) {
        for (Scenario sc : {Scenario::Sound, Scenario::Speech, Scenario::Composite}) {
            PromptSpec spec = world.sample_prompt(sc, rng);
            REQUIRE_NOTHROW(world.validate(spec));

            int total = 0;
            for (const auto& e : spec.events) total += e.duration;
            for (int w : spec.payload) total += world.word_duration(w);
            REQUIRE(total <= cfg.max_frames);

            if (sc == Scenario::Sound) {
                REQUIRE(spec.payload.empty());
                REQUIRE(spec.events.size() >= 1);
                REQUIRE(spec.events.size() <= 3);
                sound_counts.insert(spec.events.size());
                for (const auto& e : spec.events) {
                    REQUIRE(e.id >= 1);
                    REQUIRE(e.id <= cfg.n_event_types);
                    REQUIRE(e.duration >= cfg.min_event_dur);
                    REQUIRE(e.duration <= cfg.max_event_dur);
                }
                for (bool o : spec.overlaps) (o ? saw_overlap : saw_plain) = true;
            } else if (sc == Scenario::Speech) {
                REQUIRE(spec.events.size() == 1);
                REQUIRE(spec.events[0].id == 0);
                REQUIRE(spec.events[0].duration == cfg.clean_dur);
                REQUIRE(spec.overlaps.empty());
            }
            if (sc != Scenario::Sound) {
                REQUIRE(spec.payload.size() >= 2);
                REQUIRE(spec.payload.size() <= 6);
                for (int w : spec.payload) {
                    REQUIRE(w >= 0);
                    REQUIRE(w < cfg.n_words);
                }
            }
        }
    }
    REQUIRE(sound_counts == std::set<size_t>{1, 2, 3});
    REQUIRE(saw_overlap);
    REQUIRE(saw_plain);

    Rng a(42), b(42);
    for (Scenario sc : {Scenario::Sound, Scenario::Speech, Scenario::Composite}) {
        PromptSpec pa = world.sample_prompt(sc, a);
        PromptSpec pb = world.sample_prompt(sc, b);
        REQUIRE(pa.payload == pb.payload);
        REQUIRE(pa.overlaps == pb.overlaps);
        REQUIRE(pa.events.size() == pb.events.size());
        for (size_t i = 0; i < pa.events.size(); ++i) {
            REQUIRE(pa.events[i].id == pb.events[i].id);
            REQUIRE(pa.events[i].duration == pb.events[i].duration);
        }
    }
}

TEST_CASE("prompt validation rejects malformed specs") {
    ToyWorld world{WorldConfig{}};

    PromptSpec bad = sound_spec({{3, 5}}, {});
    bad.payload = {1};
    REQUIRE_THROWS_AS(world.validate(bad), ContractError);

    PromptSpec speech;
    speech.scenario = Scenario::Speech;
    speech.events = {{2, 5}};
    speech.payload = {1, 2};
    REQUIRE_THROWS_AS(world.validate(speech), ContractError);

    PromptSpec comp;
    comp.scenario = Scenario::Composite;
    comp.events = {{0, 4}};
    comp.payload = {1, 2};
    REQUIRE_THROWS_AS(world.validate(comp), ContractError);

    REQUIRE_THROWS_AS(world.validate(sound_spec({{3, 2}}, {})), ContractError);
    REQUIRE_THROWS_AS(world.validate(sound_spec({{3, 13}}, {})), ContractError);
    REQUIRE_THROWS_AS(world.validate(sound_spec({{17, 5}}, {})), ContractError);
    REQUIRE_THROWS_AS(world.validate(sound_spec({{3, 5}, {4, 5}}, {})), ContractError);

    // 8 events of 12 frames each would blow the 96-frame budget only with 9;
    // check an overstuffed hand-built spec trips the limit.
    std::vector<std::pair<int, int>> many;
    std::vector<bool> flags;
    for (int i = 0; i < 9; ++i) {
        many.push_back({1 + (i % 16), 12});
        if (i) flags.push_back(false);
    }
    REQUIRE_THROWS_AS(world.validate(sound_spec(many, flags)), ContractError);
}

TEST_CASE("renderer lays out sequential motifs and alternates overlaps") {
    ToyWorld world{WorldConfig{}};

    SECTION("single event of duration 5") {
        TokenGrid grid = world.render(sound_spec({{3, 5}}, {}));
        REQUIRE(grid.n_steps == 5);
        for (size_t f = 0; f < 5; ++f) {
            std::vector<int32_t> tuple(grid.n_codebooks);
            for (size_t q = 0; q < grid.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            auto hit = world.invert(tuple);
            REQUIRE(hit.has_value());
            REQUIRE(hit->first == 3);
            REQUIRE(hit->second == static_cast<int>(f));
        }
    }

    SECTION("two events without overlap concatenate") {
        TokenGrid grid = world.render(sound_spec({{2, 4}, {7, 4}}, {false}));
        REQUIRE(grid.n_steps == 8);
        auto item_at = [&](size_t f) {
            std::vector<int32_t> tuple(grid.n_codebooks);
            for (size_t q = 0; q < grid.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            return world.invert(tuple);
        };
        for (size_t f = 0; f < 4; ++f) {
            REQUIRE(item_at(f)->first == 2);
            REQUIRE(item_at(f)->second == static_cast<int>(f));
        }
        for (size_t f = 4; f < 8; ++f) {
            REQUIRE(item_at(f)->first == 7);
            REQUIRE(item_at(f)->second == static_cast<int>(f - 4));
        }
    }

    SECTION("empty spec renders to an empty grid") {
        PromptSpec empty;
        empty.scenario = Scenario::Sound;
        TokenGrid grid = world.render(empty);
        REQUIRE(grid.n_steps == 0);
        REQUIRE(grid.tok.empty());
    }

    SECTION("overlapped pair alternates frame by frame") {
        TokenGrid grid = world.render(sound_spec({{2, 5}, {7, 7}}, {true}));
        REQUIRE(grid.n_steps == 12);
        auto expect = [&](size_t f, int item, int j) {
            std::vector<int32_t> tuple(grid.n_codebooks);
            for (size_t q = 0; q < grid.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            auto hit = world.invert(tuple);
            REQUIRE(hit.has_value());
            REQUIRE(hit->first == item);
            REQUIRE(hit->second == j);
        };
        // a0 b0 a1 b1 ... a4 b4 then b5 b6
        for (int j = 0; j < 5; ++j) {
            expect(static_cast<size_t>(2 * j), 2, j);
            expect(static_cast<size_t>(2 * j + 1), 7, j);
        }
        expect(10, 7, 5);
        expect(11, 7, 6);
    }

    SECTION("a chain of overlaps renders round-robin") {
        TokenGrid grid = world.render(sound_spec({{1, 4}, {2, 4}, {3, 4}}, {true, true}));
        REQUIRE(grid.n_steps == 12);
        for (size_t f = 0; f < 12; ++f) {
            std::vector<int32_t> tuple(grid.n_codebooks);
            for (size_t q = 0; q < grid.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            auto hit = world.invert(tuple);
            REQUIRE(hit.has_value());
            REQUIRE(hit->first == static_cast<int>(1 + f % 3));
            REQUIRE(hit->second == static_cast<int>(f / 3));
        }
    }

    SECTION("payload words follow the events") {
        PromptSpec spec;
        spec.scenario = Scenario::Speech;
        spec.events = {{0, 4}};
        spec.payload = {2, 6};
        TokenGrid grid = world.render(spec);
        // clean 4 frames, w02 renders 4+(2%4)=6, w06 renders 4+(6%4)=6
        REQUIRE(grid.n_steps == 16);
        std::vector<int32_t> first_word(grid.n_codebooks);
        for (size_t q = 0; q < grid.n_codebooks; ++q) first_word[q] = grid.at(4, q);
        auto hit = world.invert(first_word);
        REQUIRE(hit.has_value());
        REQUIRE(hit->first == world.word_item(2));
        REQUIRE(hit->second == 0);
    }
}

TEST_CASE("detection inverts rendering across random prompts") {
    ToyWorld world{WorldConfig{}};
    Rng rng(913);
    int checked = 0;
    for (int rep = 0; rep < 80; ++rep) {
        for (Scenario sc : {Scenario::Sound, Scenario::Speech, Scenario::Composite}) {
            PromptSpec spec = world.sample_prompt(sc, rng);
            TokenGrid grid = world.render(spec);

            std::vector<int> expected_items;
            for (const auto& e : spec.events) expected_items.push_back(e.id);
            for (int w : spec.payload) expected_items.push_back(world.word_item(w));

            std::vector<Detection> dets = world.detect_events(grid);
            REQUIRE(dets.size() == expected_items.size());
            for (size_t i = 0; i < dets.size(); ++i) {
                REQUIRE(dets[i].item == expected_items[i]);
                REQUIRE(dets[i].confidence == 1.0);
                REQUIRE(dets[i].end < grid.n_steps);
                REQUIRE(dets[i].begin <= dets[i].end);
            }
            REQUIRE(world.extract_payload(grid) == spec.payload);
            ++checked;
        }
    }
    REQUIRE(checked == 240);
}

TEST_CASE("detector separates repeated and self-overlapped instances") {
    ToyWorld world{WorldConfig{}};

    SECTION("same event twice in sequence") {
        TokenGrid grid = world.render(sound_spec({{5, 6}, {5, 6}}, {false}));
        std::vector<Detection> dets = world.detect_events(grid);
        REQUIRE(dets.size() == 2);
        REQUIRE(dets[0].item == 5);
        REQUIRE(dets[1].item == 5);
        REQUIRE(dets[0].confidence == 1.0);
        REQUIRE(dets[1].confidence == 1.0);
        REQUIRE(dets[0].begin == 0);
        REQUIRE(dets[1].begin == 6);
    }

    SECTION("same event overlapped with itself") {
        TokenGrid grid = world.render(sound_spec({{5, 6}, {5, 8}}, {true}));
        std::vector<Detection> dets = world.detect_events(grid);
        REQUIRE(dets.size() == 2);
        REQUIRE(dets[0].item == 5);
        REQUIRE(dets[1].item == 5);
        REQUIRE(dets[0].confidence == 1.0);
        REQUIRE(dets[1].confidence == 1.0);
        REQUIRE(dets[0].begin == 0);
        REQUIRE(dets[1].begin == 1);
    }
}

TEST_CASE("detector confidence follows the counting rule under corruption") {
    ToyWorld world{WorldConfig{}};
    std::vector<int32_t> noise = noise_tuple(world);

    SECTION("an all-noise grid yields nothing") {
        TokenGrid grid(10, world.config().n_codebooks);
        for (size_t f = 0; f < 10; ++f) put_tuple(grid, f, noise);
        REQUIRE(world.detect_events(grid).empty());
        REQUIRE(world.extract_payload(grid).empty());
    }

    SECTION("alternating corruption halves the confidence") {
        TokenGrid grid = world.render(sound_spec({{4, 8}}, {}));
        for (size_t f = 1; f < 8; f += 2) put_tuple(grid, f, noise);
        std::vector<Detection> dets = world.detect_events(grid);
        REQUIRE(dets.size() == 1);
        REQUIRE(dets[0].item == 4);
        // Surviving steps 0,2,4,6 span steps 0..6: 4 matched of 7 expected.
        REQUIRE(dets[0].confidence == Catch::Approx(4.0 / 7.0));
        // Half corruption, up to one frame of span quantization.
        REQUIRE(std::abs(dets[0].confidence - 0.5) <= 1.0 / 7.0);
        REQUIRE(dets[0].begin == 0);
        REQUIRE(dets[0].end == 6);
    }

    SECTION("a two-step gap splits the group") {
        TokenGrid grid = world.render(sound_spec({{4, 8}}, {}));
        put_tuple(grid, 2, noise);
        put_tuple(grid, 3, noise);
        std::vector<Detection> dets = world.detect_events(grid);
        REQUIRE(dets.size() == 2);
        REQUIRE(dets[0].item == 4);
        REQUIRE(dets[1].item == 4);
        REQUIRE(dets[0].confidence == 1.0);  // steps 0..1 intact
        REQUIRE(dets[1].confidence == 1.0);  // steps 4..7 intact
    }

    SECTION("corruption never invents payload words") {
        PromptSpec spec;
        spec.scenario = Scenario::Speech;
        spec.events = {{0, 4}};
        spec.payload = {2, 6, 9};
        TokenGrid grid = world.render(spec);
        // clean [0,4), w02 [4,10), w06 [10,16), w09 [16,21)
        REQUIRE(grid.n_steps == 21);
        for (size_t f = 10; f < 16; ++f) put_tuple(grid, f, noise);
        REQUIRE(world.extract_payload(grid) == std::vector<int>{2, 9});
    }
}

TEST_CASE("oracle embedding pools per-frame item vectors by segment") {
    ToyWorld world{WorldConfig{}};
    const WorldConfig& cfg = world.config();

    SECTION("single item spanning all frames repeats its unit vector") {
        TokenGrid grid = world.render(sound_spec({{6, 12}}, {}));
        SemanticTarget t = world.oracle_embed(grid);
        REQUIRE(t.h.rows() == cfg.latent_slots);
        REQUIRE(t.h.cols() == cfg.d_sem);
        const Tensor& e = world.item_embedding(6);
        for (size_t k = 0; k < cfg.latent_slots; ++k)
            for (size_t d = 0; d < cfg.d_sem; ++d)
                REQUIRE(t.h.at(k, d) == Catch::Approx(e.v[d]).margin(1e-12));
    }

    SECTION("one frame per segment copies frame embeddings exactly") {
        REQUIRE(cfg.latent_slots == 6);
        TokenGrid grid(6, cfg.n_codebooks);
        std::vector<int> items = {1, 3, 5, 17, 20, 48};
        for (size_t f = 0; f < 6; ++f) put_tuple(grid, f, world.motif_frame(items[f], 0));
        SemanticTarget t = world.oracle_embed(grid);
        for (size_t k = 0; k < 6; ++k) {
            const Tensor& e = world.item_embedding(items[k]);
            for (size_t d = 0; d < cfg.d_sem; ++d) REQUIRE(t.h.at(k, d) == e.v[d]);
        }
    }

    SECTION("750 frames pool in 125-frame segments") {
        TokenGrid grid(750, cfg.n_codebooks);
        for (size_t f = 0; f < 750; ++f) {
            int item = static_cast<int>(f / 125);
            int j = static_cast<int>(f % static_cast<size_t>(world.motif_table_depth()));
            put_tuple(grid, f, world.motif_frame(item, j));
        }
        SemanticTarget t = world.oracle_embed(grid);
        for (size_t k = 0; k < 6; ++k) {
            const Tensor& e = world.item_embedding(static_cast<int>(k));
            for (size_t d = 0; d < cfg.d_sem; ++d)
                REQUIRE(t.h.at(k, d) == Catch::Approx(e.v[d]).margin(1e-12));
        }

        // Shifting one boundary frame to a different item moves exactly one
        // segment mean, confirming the 125-frame cut points.
        TokenGrid moved = grid;
        put_tuple(moved, 124, world.motif_frame(30, 0));
        SemanticTarget u = world.oracle_embed(moved);
        double delta0 = 0.0, delta1 = 0.0;
        for (size_t d = 0; d < cfg.d_sem; ++d) {
            delta0 += std::abs(u.h.at(0, d) - t.h.at(0, d));
            delta1 += std::abs(u.h.at(1, d) - t.h.at(1, d));
        }
        REQUIRE(delta0 > 1e-6);
        REQUIRE(delta1 == 0.0);
    }

    SECTION("short grids leave empty segments as zero vectors") {
        TokenGrid grid(3, cfg.n_codebooks);
        std::vector<int> items = {2, 9, 40};
        for (size_t f = 0; f < 3; ++f) put_tuple(grid, f, world.motif_frame(items[f], 0));
        SemanticTarget t = world.oracle_embed(grid);
        // boundaries floor(k*3/6): segments 0,2,4 are empty
        for (size_t k : {0u, 2u, 4u})
            for (size_t d = 0; d < cfg.d_sem; ++d) REQUIRE(t.h.at(k, d) == 0.0);
        for (size_t pair = 0; pair < 3; ++pair) {
            const Tensor& e = world.item_embedding(items[pair]);
            for (size_t d = 0; d < cfg.d_sem; ++d)
                REQUIRE(t.h.at(2 * pair + 1, d) == e.v[d]);
        }
    }

    SECTION("an empty grid pools to all-zero rows") {
        TokenGrid grid(0, cfg.n_codebooks);
        SemanticTarget t = world.oracle_embed(grid);
        REQUIRE(t.h.rows() == cfg.latent_slots);
        for (double x : t.h.v) REQUIRE(x == 0.0);
    }

    SECTION("segment means never exceed unit norm") {
        Rng rng(55);
        for (int rep = 0; rep < 40; ++rep) {
            Scenario sc = static_cast<Scenario>(rep % 3);
            TokenGrid grid = world.render(world.sample_prompt(sc, rng));
            SemanticTarget t = world.oracle_embed(grid);
            for (size_t k = 0; k < cfg.latent_slots; ++k) {
                double norm = 0.0;
                for (size_t d = 0; d < cfg.d_sem; ++d) norm += t.h.at(k, d) * t.h.at(k, d);
                REQUIRE(std::sqrt(norm) <= 1.0 + 1e-9);
            }
        }
    }

    SECTION("unknown tuples raise an inversion error") {
        TokenGrid grid(2, cfg.n_codebooks);
        put_tuple(grid, 0, world.motif_frame(1, 0));
        put_tuple(grid, 1, noise_tuple(world));
        REQUIRE_THROWS_AS(world.oracle_embed(grid), InversionError);
        try {
            world.oracle_embed(grid);
        } catch (const InversionError& e) {
            REQUIRE(std::string(e.what()).find("frame 2") != std::string::npos);
        }
    }
}

TEST_CASE("text realization stays inside the vocabulary and quotes payloads") {
    ToyWorld world{WorldConfig{}};
    const int32_t quote_id = world.token_id("quote");
    Rng rng(321);

    for (int rep = 0; rep < 120; ++rep) {
        Scenario sc = static_cast<Scenario>(rep % 3);
        PromptSpec spec = world.sample_prompt(sc, rng);
        std::vector<int32_t> text = world.realize_text(spec, rng);
        REQUIRE(!text.empty());
        for (int32_t t : text) {
            REQUIRE(t >= 0);
            REQUIRE(t < world.markers().sot);  // markers never appear in prose
        }
        if (sc != Scenario::Sound) {
            std::vector<size_t> quote_pos;
            for (size_t i = 0; i < text.size(); ++i)
                if (text[i] == quote_id) quote_pos.push_back(i);
            REQUIRE(quote_pos.size() == 2);
            std::vector<int32_t> quoted(text.begin() + static_cast<long>(quote_pos[0]) + 1,
                                        text.begin() + static_cast<long>(quote_pos[1]));
            std::vector<int32_t> expected;
            for (int w : spec.payload) expected.push_back(world.token_id(world.word_name(w)));
            REQUIRE(quoted == expected);
        }
    }
}

TEST_CASE("text realization exposes overlap structure through connectives") {
    ToyWorld world{WorldConfig{}};
    PromptSpec spec = sound_spec({{3, 5}, {8, 6}}, {true});
    Rng rng(7);
    std::vector<int32_t> text = world.realize_text(spec, rng);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("while")) == 1);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("then")) == 0);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("e03")) == 1);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("e08")) == 1);

    spec.overlaps = {false};
    Rng rng2(7);
    text = world.realize_text(spec, rng2);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("then")) == 1);
    REQUIRE(std::count(text.begin(), text.end(), world.token_id("while")) == 0);
}

TEST_CASE("text realization is seed-deterministic and template-diverse") {
    ToyWorld world{WorldConfig{}};
    PromptSpec spec = sound_spec({{3, 5}}, {});

    Rng a(100), b(100);
    REQUIRE(world.realize_text(spec, a) == world.realize_text(spec, b));

    std::set<std::vector<int32_t>> variants;
    Rng c(200);
    for (int i = 0; i < 50; ++i) variants.insert(world.realize_text(spec, c));
    REQUIRE(variants.size() >= 3);  // several of the five templates observed
}

TEST_CASE("world files round trip and reject tampering") {
    WorldConfig cfg;
    cfg.n_event_types = 5;
    cfg.n_words = 8;
    cfg.d_sem = 12;
    ToyWorld world(cfg);
    const std::string path = "world_roundtrip.json";
    world.save(path);

    ToyWorld back = ToyWorld::load(path);
    REQUIRE(back.hash_seed() == world.hash_seed());
    REQUIRE(back.v_text() == world.v_text());
    REQUIRE(back.vocab() == world.vocab());
    for (int item = 0; item < world.item_count(); ++item) {
        REQUIRE(back.item_embedding(item).v == world.item_embedding(item).v);
        for (int j = 0; j < world.motif_table_depth(); ++j)
            REQUIRE(back.motif_frame(item, j) == world.motif_frame(item, j));
    }

    SECTION("embedding tampering is caught") {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        in.close();
        j["item_embeddings"][0][0] = j["item_embeddings"][0][0].get<double>() + 1.0;
        std::ofstream out(path, std::ios::trunc);
        out << j.dump();
        out.close();
        REQUIRE_THROWS_AS(ToyWorld::load(path), IoError);
    }

    SECTION("missing fields are caught") {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        in.close();
        j.erase("hash_seed");
        std::ofstream out(path, std::ios::trunc);
        out << j.dump();
        out.close();
        REQUIRE_THROWS_AS(ToyWorld::load(path), IoError);
    }

    SECTION("unparsable files are caught") {
        std::ofstream out(path, std::ios::trunc);
        out << "not json";
        out.close();
        REQUIRE_THROWS_AS(ToyWorld::load(path), IoError);
    }

    std::remove(path.c_str());
}

TEST_CASE("dataset files round trip record by record") {
    ToyWorld world{WorldConfig{}};
    Rng rng(606);
    std::vector<Record> records;
    for (int i = 0; i < 30; ++i)
        records.push_back(make_record(world, i, static_cast<Scenario>(i % 3), rng));

    const std::string path = "dataset_roundtrip.jsonl";
    save_dataset(path, records);
    std::vector<Record> back = load_dataset(path, world.config());
    std::remove(path.c_str());

    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const Record& a = records[i];
        const Record& b = back[i];
        REQUIRE(b.id == a.id);
        REQUIRE(b.scenario == a.scenario);
        REQUIRE(b.text == a.text);
        REQUIRE(b.grid == a.grid);
        REQUIRE(b.semantic.shape == a.semantic.shape);
        REQUIRE(b.semantic.v == a.semantic.v);  // doubles survive the text form exactly
        REQUIRE(b.spec.payload == a.spec.payload);
        REQUIRE(b.spec.overlaps == a.spec.overlaps);
        REQUIRE(b.spec.events.size() == a.spec.events.size());
        for (size_t e = 0; e < a.spec.events.size(); ++e) {
            REQUIRE(b.spec.events[e].id == a.spec.events[e].id);
            REQUIRE(b.spec.events[e].duration == a.spec.events[e].duration);
        }
        // A loaded record still satisfies the world's inversion property.
        REQUIRE(world.extract_payload(b.grid) == a.spec.payload);
    }
}

TEST_CASE("dataset loading rejects malformed records") {
    ToyWorld world{WorldConfig{}};
    Rng rng(707);
    Record r = make_record(world, 0, Scenario::Speech, rng);
    const std::string path = "dataset_malformed.jsonl";

    SECTION("broken json line") {
        std::ofstream f(path, std::ios::trunc);
        f << record_to_json(r).dump() << '\n' << "{not json\n";
        f.close();
        REQUIRE_THROWS_AS(load_dataset(path, world.config()), IoError);
    }

    SECTION("grid token outside the audio vocabulary") {
        nlohmann::json j = record_to_json(r);
        j["grid"]["tokens"][0] = world.config().v_audio;
        std::ofstream f(path, std::ios::trunc);
        f << j.dump() << '\n';
        f.close();
        REQUIRE_THROWS_AS(load_dataset(path, world.config()), IoError);
    }

    SECTION("wrong semantic row count") {
        nlohmann::json j = record_to_json(r);
        j["semantic"].erase(0);
        std::ofstream f(path, std::ios::trunc);
        f << j.dump() << '\n';
        f.close();
        REQUIRE_THROWS_AS(load_dataset(path, world.config()), IoError);
    }

    SECTION("wrong codebook count") {
        nlohmann::json j = record_to_json(r);
        j["grid"]["q"] = world.config().n_codebooks + 1;
        std::ofstream f(path, std::ios::trunc);
        f << j.dump() << '\n';
        f.close();
        REQUIRE_THROWS_AS(load_dataset(path, world.config()), IoError);
    }

    std::remove(path.c_str());
}
