#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "planaudio/common.hpp"
#include "planaudio/layout.hpp"
#include "planaudio/rng.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

enum class Scenario { Sound, Speech, Composite };

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::Sound: return "sound";
        case Scenario::Speech: return "speech";
        case Scenario::Composite: return "composite";
    }
    return "?";
}

inline Scenario scenario_from_name(const std::string& name) {
    if (name == "sound") return Scenario::Sound;
    if (name == "speech") return Scenario::Speech;
    if (name == "composite") return Scenario::Composite;
    throw ConfigError(strformat("unknown scenario '%s'", name.c_str()));
}

// Symbolic description of one clip: an ordered event timeline (id 0 is the
// reserved "clean" background), an optional spoken word payload, and overlap
// flags for each adjacent event pair.
struct PromptSpec {
    struct Event {
        int id = 0;
        int duration = 0;
    };

    Scenario scenario = Scenario::Sound;
    std::vector<Event> events;
    std::vector<int> payload;
    std::vector<bool> overlaps;
};

// Pooled per-segment semantic vectors, one row per latent slot.
struct SemanticTarget {
    Tensor h;  // K x d_sem
};

struct Detection {
    int item = -1;  // unified item id: events first, then words
    double confidence = 0.0;
    size_t begin = 0;  // frame span, inclusive
    size_t end = 0;
};

struct WorldConfig {
    int n_event_types = 16;  // non-clean events; id 0 is always "clean"
    int n_words = 32;
    int32_t v_audio = 64;
    size_t n_codebooks = 4;
    size_t d_sem = 32;
    size_t latent_slots = 6;
    int max_frames = 96;
    int min_event_dur = 4;
    int max_event_dur = 12;
    int clean_dur = 4;
    uint64_t seed = 2025;

    void validate() const {
        if (n_event_types < 1 || n_words < 1)
            throw ConfigError("world needs at least one event type and one word");
        if (v_audio < 2) throw ConfigError("v_audio must be at least 2");
        if (n_codebooks == 0) throw ConfigError("n_codebooks must be positive");
        if (d_sem == 0 || latent_slots == 0)
            throw ConfigError("d_sem and latent_slots must be positive");
        if (min_event_dur < 1 || max_event_dur < min_event_dur)
            throw ConfigError("event duration range is empty");
        if (clean_dur < 1 || clean_dur > max_event_dur)
            throw ConfigError("clean duration outside the motif table");
        if (max_frames < 1) throw ConfigError("max_frames must be positive");
    }
};

// Deterministic miniature audio universe. Every (item, motif step) pair maps
// to a unique Q-token tuple, so rendered grids are exactly invertible.
class ToyWorld {
public:
    explicit ToyWorld(const WorldConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        build_vocab();
        build_embeddings();
        build_motif_table();
    }

    const WorldConfig& config() const { return cfg_; }
    uint64_t hash_seed() const { return hash_seed_; }

    // --- item space: [0] clean, [1..E] events, [E+1 .. E+W] words ---
    int item_count() const { return cfg_.n_event_types + 1 + cfg_.n_words; }
    int word_item_base() const { return cfg_.n_event_types + 1; }
    bool is_word_item(int item) const { return item >= word_item_base() && item < item_count(); }
    int word_item(int word_id) const {
        if (word_id < 0 || word_id >= cfg_.n_words)
            throw IndexError(strformat("word id %d outside lexicon of %d", word_id, cfg_.n_words));
        return word_item_base() + word_id;
    }
    int word_of_item(int item) const {
        if (!is_word_item(item))
            throw IndexError(strformat("item %d is not a word", item));
        return item - word_item_base();
    }

    // Every word renders with a fixed, id-dependent duration; the prompt spec
    // carries durations only for events.
    int word_duration(int word_id) const { return 4 + (word_id % 4); }
    int motif_table_depth() const {
        int max_word = 4 + std::min(cfg_.n_words - 1, 3);
        return std::max(cfg_.max_event_dur, max_word);
    }

    // --- motif table ---
    std::vector<int32_t> motif_frame(int item, int j) const {
        if (item < 0 || item >= item_count())
            throw IndexError(strformat("item %d outside world of %d items", item, item_count()));
        if (j < 0 || j >= motif_table_depth())
            throw IndexError(strformat("motif step %d outside table depth %d", j,
                                       motif_table_depth()));
        std::vector<int32_t> tuple(cfg_.n_codebooks);
        for (size_t q = 0; q < cfg_.n_codebooks; ++q)
            tuple[q] = hashed_token(hash_seed_, item, j, q);
        return tuple;
    }

    std::optional<std::pair<int, int>> invert(const std::vector<int32_t>& tuple) const {
        auto it = inverse_.find(tuple);
        if (it == inverse_.end()) return std::nullopt;
        return it->second;
    }

    const Tensor& item_embedding(int item) const {
        if (item < 0 || item >= item_count())
            throw IndexError(strformat("item %d outside world of %d items", item, item_count()));
        return embeddings_[static_cast<size_t>(item)];
    }

    // --- prompt grammar ---
    void validate(const PromptSpec& spec) const {
        switch (spec.scenario) {
            case Scenario::Sound:
                if (!spec.payload.empty())
                    throw ContractError("sound prompts carry no spoken payload");
                if (spec.events.empty())
                    throw ContractError("sound prompts need at least one event");
                break;
            case Scenario::Speech:
                if (spec.events.size() != 1 || spec.events[0].id != 0)
                    throw ContractError("speech prompts use exactly the clean background event");
                if (spec.payload.empty())
                    throw ContractError("speech prompts need a spoken payload");
                break;
            case Scenario::Composite: {
                bool has_real = false;
                for (const auto& e : spec.events) has_real = has_real || e.id != 0;
                if (!has_real)
                    throw ContractError("composite prompts need at least one non-clean event");
                if (spec.payload.empty())
                    throw ContractError("composite prompts need a spoken payload");
                break;
            }
        }
        size_t expected_flags = spec.events.empty() ? 0 : spec.events.size() - 1;
        if (spec.overlaps.size() != expected_flags)
            throw ContractError(strformat("expected %zu overlap flags, got %zu", expected_flags,
                                          spec.overlaps.size()));
        int total = 0;
        for (const auto& e : spec.events) {
            if (e.id < 0 || e.id > cfg_.n_event_types)
                throw ContractError(strformat("event id %d outside inventory of %d", e.id,
                                              cfg_.n_event_types));
            if (e.id == 0) {
                if (e.duration != cfg_.clean_dur)
                    throw ContractError(strformat("clean event must run %d frames, got %d",
                                                  cfg_.clean_dur, e.duration));
            } else if (e.duration < cfg_.min_event_dur || e.duration > cfg_.max_event_dur) {
                throw ContractError(strformat("event duration %d outside [%d, %d]", e.duration,
                                              cfg_.min_event_dur, cfg_.max_event_dur));
            }
            total += e.duration;
        }
        for (int w : spec.payload) {
            if (w < 0 || w >= cfg_.n_words)
                throw ContractError(strformat("word id %d outside lexicon of %d", w,
                                              cfg_.n_words));
            total += word_duration(w);
        }
        if (total > cfg_.max_frames)
            throw ContractError(strformat("prompt renders to %d frames, limit is %d", total,
                                          cfg_.max_frames));
    }

    PromptSpec sample_prompt(Scenario scenario, Rng& rng) const {
        PromptSpec spec;
        spec.scenario = scenario;
        if (scenario == Scenario::Speech) {
            spec.events.push_back({0, cfg_.clean_dur});
        } else {
            size_t n_ev = 1 + static_cast<size_t>(rng.uniform_int(3));
            for (size_t i = 0; i < n_ev; ++i) {
                int id = 1 + static_cast<int>(rng.uniform_int(
                                 static_cast<uint64_t>(cfg_.n_event_types)));
                int dur = cfg_.min_event_dur +
                          static_cast<int>(rng.uniform_int(static_cast<uint64_t>(
                              cfg_.max_event_dur - cfg_.min_event_dur + 1)));
                spec.events.push_back({id, dur});
            }
            for (size_t i = 1; i < n_ev; ++i) spec.overlaps.push_back(rng.bernoulli(0.35));
        }
        if (scenario != Scenario::Sound) {
            size_t n_w = 2 + static_cast<size_t>(rng.uniform_int(5));
            for (size_t i = 0; i < n_w; ++i)
                spec.payload.push_back(
                    static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg_.n_words))));
        }
        validate(spec);
        return spec;
    }

    // --- renderer ---
    // Events first, then payload words, each as its motif frame run. Events
    // chained by overlap flags render round-robin so their frames alternate.
    TokenGrid render(const PromptSpec& spec) const {
        std::vector<std::pair<int, int>> timeline;  // (item, motif step)
        size_t i = 0;
        while (i < spec.events.size()) {
            size_t group_end = i + 1;
            while (group_end < spec.events.size() && spec.overlaps[group_end - 1]) ++group_end;
            std::vector<std::pair<int, int>> cursor;  // (item, next step) per member
            std::vector<int> left;
            for (size_t m = i; m < group_end; ++m) {
                cursor.push_back({spec.events[m].id, 0});
                left.push_back(spec.events[m].duration);
            }
            bool any = true;
            while (any) {
                any = false;
                for (size_t m = 0; m < cursor.size(); ++m) {
                    if (left[m] == 0) continue;
                    timeline.push_back({cursor[m].first, cursor[m].second});
                    ++cursor[m].second;
                    --left[m];
                    any = true;
                }
            }
            i = group_end;
        }
        for (int w : spec.payload) {
            int item = word_item(w);
            for (int j = 0; j < word_duration(w); ++j) timeline.push_back({item, j});
        }

        TokenGrid grid(timeline.size(), cfg_.n_codebooks);
        for (size_t n = 0; n < timeline.size(); ++n) {
            std::vector<int32_t> tuple = motif_frame(timeline[n].first, timeline[n].second);
            for (size_t q = 0; q < cfg_.n_codebooks; ++q) grid.at(n, q) = tuple[q];
        }
        return grid;
    }

    // --- text side ---
    int32_t v_text() const { return static_cast<int32_t>(vocab_.size()); }
    MarkerIds markers() const { return MarkerIds::from_text_vocab(v_text()); }
    const std::vector<std::string>& vocab() const { return vocab_; }

    const std::string& token_name(int32_t id) const {
        if (id < 0 || id >= v_text())
            throw IndexError(strformat("text token %d outside vocabulary of %d", id, v_text()));
        return vocab_[static_cast<size_t>(id)];
    }

    int32_t token_id(const std::string& word) const {
        auto it = token_ids_.find(word);
        if (it == token_ids_.end())
            throw ContractError(strformat("word '%s' is not in the text vocabulary",
                                          word.c_str()));
        return it->second;
    }

    std::vector<int32_t> tokenize(const std::string& text) const {
        std::vector<int32_t> out;
        std::istringstream in(text);
        std::string word;
        while (in >> word) out.push_back(token_id(word));
        return out;
    }

    std::string detokenize(const std::vector<int32_t>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token_name(ids[i]);
        }
        return out;
    }

    std::vector<int32_t> realize_text(const PromptSpec& spec, Rng& rng) const {
        static const std::vector<std::string> sound_templates = {
            "render the sound of %E",
            "play %E alone",
            "make a sound clip of %E",
            "produce a track of %E",
            "the sound of %E over background",
        };
        static const std::vector<std::string> speech_templates = {
            "a voice says quote %P quote",
            "render the speech line quote %P quote",
            "play a voice recording says quote %P quote",
            "make a speech clip says quote %P quote",
            "produce a speech track says quote %P quote",
        };
        static const std::vector<std::string> composite_templates = {
            "render %E with a voice says quote %P quote",
            "play %E over speech says quote %P quote",
            "make a track of %E mixed with a voice says quote %P quote",
            "produce the audio of %E with speech says quote %P quote",
            "%E with a recording says quote %P quote",
        };
        const std::vector<std::string>* templates = nullptr;
        switch (spec.scenario) {
            case Scenario::Sound: templates = &sound_templates; break;
            case Scenario::Speech: templates = &speech_templates; break;
            case Scenario::Composite: templates = &composite_templates; break;
        }
        const std::string& tmpl =
            (*templates)[rng.uniform_int(static_cast<uint64_t>(templates->size()))];

        std::string events_phrase;
        for (size_t e = 0; e < spec.events.size(); ++e) {
            if (e) events_phrase += spec.overlaps[e - 1] ? " while " : " then ";
            events_phrase += event_name(spec.events[e].id);
        }
        std::string payload_phrase;
        for (size_t w = 0; w < spec.payload.size(); ++w) {
            if (w) payload_phrase += ' ';
            payload_phrase += word_name(spec.payload[w]);
        }

        std::string text;
        for (size_t p = 0; p < tmpl.size(); ++p) {
            if (tmpl[p] == '%' && p + 1 < tmpl.size() && tmpl[p + 1] == 'E') {
                text += events_phrase;
                ++p;
            } else if (tmpl[p] == '%' && p + 1 < tmpl.size() && tmpl[p + 1] == 'P') {
                text += payload_phrase;
                ++p;
            } else {
                text += tmpl[p];
            }
        }
        return tokenize(text);
    }

    // --- oracle embedder ---
    SemanticTarget oracle_embed(const TokenGrid& grid) const {
        const size_t n = grid.n_steps;
        const size_t k_slots = cfg_.latent_slots;
        SemanticTarget target;
        target.h = Tensor::zeros({k_slots, cfg_.d_sem});

        std::vector<int> frame_item(n);
        for (size_t f = 0; f < n; ++f) {
            std::vector<int32_t> tuple(cfg_.n_codebooks);
            for (size_t q = 0; q < cfg_.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            auto hit = invert(tuple);
            if (!hit)
                throw InversionError(strformat("frame %zu does not map to any motif step", f + 1));
            frame_item[f] = hit->first;
        }
        for (size_t k = 0; k < k_slots; ++k) {
            size_t lo = k * n / k_slots;
            size_t hi = (k + 1) * n / k_slots;
            if (hi <= lo) continue;  // empty segment stays a zero vector
            for (size_t f = lo; f < hi; ++f) {
                const Tensor& e = item_embedding(frame_item[f]);
                for (size_t d = 0; d < cfg_.d_sem; ++d) target.h.at(k, d) += e.v[d];
            }
            double inv = 1.0 / static_cast<double>(hi - lo);
            for (size_t d = 0; d < cfg_.d_sem; ++d) target.h.at(k, d) *= inv;
        }
        return target;
    }

    // --- exact detector ---
    // Groups frames of one item whose motif steps strictly increase by 1 or 2
    // (a single missing step is absorbed, which also covers overlap
    // alternation). Uninvertible frames are noise and contribute nothing.
    std::vector<Detection> detect_events(const TokenGrid& grid) const {
        struct Group {
            int item;
            int last_j;
            int min_j;
            int max_j;
            size_t count;
            size_t begin;
            size_t end;
        };
        std::vector<Group> groups;
        for (size_t f = 0; f < grid.n_steps; ++f) {
            std::vector<int32_t> tuple(cfg_.n_codebooks);
            for (size_t q = 0; q < cfg_.n_codebooks; ++q) tuple[q] = grid.at(f, q);
            auto hit = invert(tuple);
            if (!hit) continue;
            auto [item, j] = *hit;
            bool placed = false;
            // Newest groups first so interleaved instances of the same item
            // each keep their own chain.
            for (size_t g = groups.size(); g-- > 0 && !placed;) {
                Group& grp = groups[g];
                if (grp.item != item) continue;
                int step = j - grp.last_j;
                if (step < 1 || step > 2) continue;
                grp.last_j = j;
                grp.max_j = std::max(grp.max_j, j);
                grp.min_j = std::min(grp.min_j, j);
                ++grp.count;
                grp.end = f;
                placed = true;
            }
            if (!placed) groups.push_back({item, j, j, j, 1, f, f});
        }
        std::vector<Detection> out;
        out.reserve(groups.size());
        for (const Group& g : groups) {
            Detection d;
            d.item = g.item;
            d.confidence =
                static_cast<double>(g.count) / static_cast<double>(g.max_j - g.min_j + 1);
            d.begin = g.begin;
            d.end = g.end;
            out.push_back(d);
        }
        std::stable_sort(out.begin(), out.end(),
                         [](const Detection& a, const Detection& b) { return a.begin < b.begin; });
        return out;
    }

    std::vector<int> extract_payload(const TokenGrid& grid) const {
        std::vector<int> words;
        for (const Detection& d : detect_events(grid))
            if (is_word_item(d.item)) words.push_back(word_of_item(d.item));
        return words;
    }

    std::string event_name(int event_id) const {
        if (event_id < 0 || event_id > cfg_.n_event_types)
            throw IndexError(strformat("event id %d outside inventory of %d", event_id,
                                       cfg_.n_event_types));
        if (event_id == 0) return "clean";
        return strformat("e%02d", event_id);
    }

    std::string word_name(int word_id) const {
        if (word_id < 0 || word_id >= cfg_.n_words)
            throw IndexError(strformat("word id %d outside lexicon of %d", word_id,
                                       cfg_.n_words));
        return strformat("w%02d", word_id + 1);
    }

    std::string item_name(int item) const {
        return is_word_item(item) ? word_name(word_of_item(item)) : event_name(item);
    }

    // --- persistence ---
    void save(const std::string& path) const {
        nlohmann::json j;
        j["config"] = config_to_json(cfg_);
        j["hash_seed"] = std::to_string(hash_seed_);
        j["text_vocab"] = vocab_;
        std::vector<std::string> names;
        for (int item = 0; item < item_count(); ++item) names.push_back(item_name(item));
        j["item_names"] = names;
        nlohmann::json emb = nlohmann::json::array();
        for (const Tensor& e : embeddings_) emb.push_back(e.v);
        j["item_embeddings"] = emb;

        std::ofstream f(path, std::ios::trunc);
        if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
        f << j.dump(2) << '\n';
        if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
    }

    static ToyWorld load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError(strformat("cannot open '%s' for reading", path.c_str()));
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("world file '%s' is not valid: %s", path.c_str(), e.what()));
        }
        try {
            WorldConfig cfg = config_from_json(j.at("config"));
            ToyWorld world(cfg);
            uint64_t stored_seed = std::stoull(j.at("hash_seed").get<std::string>());
            if (stored_seed != world.hash_seed_)
                throw IoError(strformat("world file hash seed %llu disagrees with rebuilt %llu",
                                        static_cast<unsigned long long>(stored_seed),
                                        static_cast<unsigned long long>(world.hash_seed_)));
            auto vocab = j.at("text_vocab").get<std::vector<std::string>>();
            if (vocab != world.vocab_) throw IoError("world file text vocabulary disagrees");
            auto emb = j.at("item_embeddings");
            if (emb.size() != static_cast<size_t>(world.item_count()))
                throw IoError("world file embedding table has the wrong item count");
            for (size_t i = 0; i < emb.size(); ++i) {
                auto row = emb[i].get<std::vector<double>>();
                if (row != world.embeddings_[i].v)
                    throw IoError(strformat("world file embedding %zu disagrees", i));
            }
            return world;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("world file '%s' is missing fields: %s", path.c_str(),
                                    e.what()));
        }
    }

    static nlohmann::json config_to_json(const WorldConfig& c) {
        nlohmann::json j;
        j["n_event_types"] = c.n_event_types;
        j["n_words"] = c.n_words;
        j["v_audio"] = c.v_audio;
        j["n_codebooks"] = c.n_codebooks;
        j["d_sem"] = c.d_sem;
        j["latent_slots"] = c.latent_slots;
        j["max_frames"] = c.max_frames;
        j["min_event_dur"] = c.min_event_dur;
        j["max_event_dur"] = c.max_event_dur;
        j["clean_dur"] = c.clean_dur;
        j["seed"] = std::to_string(c.seed);
        return j;
    }

    static WorldConfig config_from_json(const nlohmann::json& j) {
        WorldConfig c;
        c.n_event_types = j.at("n_event_types").get<int>();
        c.n_words = j.at("n_words").get<int>();
        c.v_audio = j.at("v_audio").get<int32_t>();
        c.n_codebooks = j.at("n_codebooks").get<size_t>();
        c.d_sem = j.at("d_sem").get<size_t>();
        c.latent_slots = j.at("latent_slots").get<size_t>();
        c.max_frames = j.at("max_frames").get<int>();
        c.min_event_dur = j.at("min_event_dur").get<int>();
        c.max_event_dur = j.at("max_event_dur").get<int>();
        c.clean_dur = j.at("clean_dur").get<int>();
        c.seed = std::stoull(j.at("seed").get<std::string>());
        return c;
    }

private:
    int32_t hashed_token(uint64_t seed, int item, int j, size_t q) const {
        uint64_t key = (static_cast<uint64_t>(item) << 32) ^
                       (static_cast<uint64_t>(j) << 8) ^ static_cast<uint64_t>(q);
        uint64_t h = splitmix64(seed ^ splitmix64(key));
        return static_cast<int32_t>(h % static_cast<uint64_t>(cfg_.v_audio));
    }

    void build_vocab() {
        static const std::vector<std::string> base = {
            "then",  "while", "says",  "quote",   "render",  "play",   "make",
            "the",   "sound", "of",    "a",       "speech",  "voice",  "recording",
            "with",  "over",  "mixed", "track",   "audio",   "clip",   "produce",
            "line",  "background",     "alone",
        };
        vocab_ = base;
        for (int e = 0; e <= cfg_.n_event_types; ++e) vocab_.push_back(event_name(e));
        for (int w = 0; w < cfg_.n_words; ++w) vocab_.push_back(word_name(w));
        vocab_.push_back("<sot>");
        vocab_.push_back("<sol>");
        vocab_.push_back("<soa>");
        vocab_.push_back("<eoa>");
        for (size_t i = 0; i < vocab_.size(); ++i)
            token_ids_[vocab_[i]] = static_cast<int32_t>(i);
        if (token_ids_.size() != vocab_.size())
            throw ConfigError("text vocabulary contains duplicate words");
    }

    void build_embeddings() {
        Rng rng(derive_seed(cfg_.seed, "item-embed"));
        for (int item = 0; item < item_count(); ++item) {
            Tensor e = Tensor::randn({cfg_.d_sem}, rng, 1.0);
            double norm = 0.0;
            for (double x : e.v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-12) norm = 1.0;
            for (double& x : e.v) x /= norm;
            embeddings_.push_back(std::move(e));
        }
    }

    void build_motif_table() {
        const int depth = motif_table_depth();
        for (uint64_t attempt = 0; attempt < 1000; ++attempt) {
            uint64_t candidate = derive_seed(cfg_.seed, "motif-hash", attempt);
            std::map<std::vector<int32_t>, std::pair<int, int>> table;
            bool ok = true;
            for (int item = 0; item < item_count() && ok; ++item) {
                for (int j = 0; j < depth && ok; ++j) {
                    std::vector<int32_t> tuple(cfg_.n_codebooks);
                    for (size_t q = 0; q < cfg_.n_codebooks; ++q)
                        tuple[q] = hashed_token(candidate, item, j, q);
                    ok = table.emplace(std::move(tuple), std::make_pair(item, j)).second;
                }
            }
            if (ok) {
                hash_seed_ = candidate;
                inverse_ = std::move(table);
                return;
            }
        }
        throw ContractError(
            "no injective motif table found in 1000 hash seeds; the token space is too small "
            "for this world size");
    }

    WorldConfig cfg_;
    uint64_t hash_seed_ = 0;
    std::map<std::vector<int32_t>, std::pair<int, int>> inverse_;
    std::vector<Tensor> embeddings_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int32_t> token_ids_;
};

// --- dataset records ---

struct Record {
    int64_t id = 0;
    Scenario scenario = Scenario::Sound;
    std::vector<int32_t> text;
    PromptSpec spec;
    TokenGrid grid{0, 1};
    Tensor semantic;  // K x d_sem
};

inline Record make_record(const ToyWorld& world, int64_t id, Scenario scenario, Rng& rng) {
    Record r;
    r.id = id;
    r.scenario = scenario;
    r.spec = world.sample_prompt(scenario, rng);
    r.text = world.realize_text(r.spec, rng);
    r.grid = world.render(r.spec);
    r.semantic = world.oracle_embed(r.grid).h;
    return r;
}

inline nlohmann::json record_to_json(const Record& r) {
    nlohmann::json spec;
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : r.spec.events) events.push_back({e.id, e.duration});
    spec["events"] = events;
    spec["payload"] = r.spec.payload;
    nlohmann::json overlaps = nlohmann::json::array();
    for (bool o : r.spec.overlaps) overlaps.push_back(o ? 1 : 0);
    spec["overlaps"] = overlaps;

    nlohmann::json grid;
    grid["n"] = r.grid.n_steps;
    grid["q"] = r.grid.n_codebooks;
    grid["tokens"] = r.grid.tok;

    nlohmann::json semantic = nlohmann::json::array();
    for (size_t k = 0; k < r.semantic.rows(); ++k) {
        std::vector<double> row(r.semantic.v.begin() + static_cast<long>(k * r.semantic.cols()),
                                r.semantic.v.begin() +
                                    static_cast<long>((k + 1) * r.semantic.cols()));
        semantic.push_back(row);
    }

    nlohmann::json j;
    j["id"] = r.id;
    j["scenario"] = scenario_name(r.scenario);
    j["text_token_ids"] = r.text;
    j["prompt_spec"] = spec;
    j["grid"] = grid;
    j["semantic"] = semantic;
    return j;
}

inline Record record_from_json(const nlohmann::json& j, const WorldConfig& cfg) {
    Record r;
    r.id = j.at("id").get<int64_t>();
    r.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    r.text = j.at("text_token_ids").get<std::vector<int32_t>>();
    r.spec.scenario = r.scenario;
    for (const auto& e : j.at("prompt_spec").at("events")) {
        if (!e.is_array() || e.size() != 2)
            throw IoError("prompt_spec events must be [id, duration] pairs");
        r.spec.events.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    r.spec.payload = j.at("prompt_spec").at("payload").get<std::vector<int>>();
    for (const auto& o : j.at("prompt_spec").at("overlaps"))
        r.spec.overlaps.push_back(o.get<int>() != 0);

    const auto& g = j.at("grid");
    size_t n = g.at("n").get<size_t>();
    size_t q = g.at("q").get<size_t>();
    if (q != cfg.n_codebooks)
        throw IoError(strformat("record %lld grid has %zu codebooks, world has %zu",
                                static_cast<long long>(r.id), q, cfg.n_codebooks));
    TokenGrid grid(n, q);
    auto tokens = g.at("tokens").get<std::vector<int32_t>>();
    if (tokens.size() != n * q)
        throw IoError(strformat("record %lld grid carries %zu tokens, expected %zu",
                                static_cast<long long>(r.id), tokens.size(), n * q));
    grid.tok = std::move(tokens);
    for (int32_t t : grid.tok)
        if (t < 0 || t >= cfg.v_audio)
            throw IoError(strformat("record %lld grid token %d outside vocabulary of %d",
                                    static_cast<long long>(r.id), t, cfg.v_audio));
    r.grid = std::move(grid);

    const auto& sem = j.at("semantic");
    if (sem.size() != cfg.latent_slots)
        throw IoError(strformat("record %lld carries %zu semantic rows, expected %zu",
                                static_cast<long long>(r.id), sem.size(), cfg.latent_slots));
    r.semantic = Tensor::zeros({cfg.latent_slots, cfg.d_sem});
    for (size_t k = 0; k < cfg.latent_slots; ++k) {
        auto row = sem[k].get<std::vector<double>>();
        if (row.size() != cfg.d_sem)
            throw IoError(strformat("record %lld semantic row %zu has %zu values, expected %zu",
                                    static_cast<long long>(r.id), k, row.size(), cfg.d_sem));
        for (size_t d = 0; d < cfg.d_sem; ++d) r.semantic.at(k, d) = row[d];
    }
    return r;
}

inline void save_dataset(const std::string& path, const std::vector<Record>& records) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(strformat("cannot open '%s' for writing", path.c_str()));
    for (const Record& r : records) f << record_to_json(r).dump() << '\n';
    if (!f) throw IoError(strformat("short write to '%s'", path.c_str()));
}

inline std::vector<Record> load_dataset(const std::string& path, const WorldConfig& cfg) {
    std::ifstream f(path);
    if (!f) throw IoError(strformat("cannot open '%s' for reading", path.c_str()));
    std::vector<Record> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("dataset line %zu is not valid: %s", line_no, e.what()));
        }
        try {
            records.push_back(record_from_json(j, cfg));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(strformat("dataset line %zu is missing fields: %s", line_no, e.what()));
        }
    }
    return records;
}

}  // namespace planaudio
