#include "adaptkit/sft.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <utility>

#include <json.hpp>

#include "adaptkit/errors.hpp"
#include "adaptkit/prng.hpp"

namespace adaptkit::sft {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 3> kRoleLabels = {"system", "user", "assistant"};
constexpr std::array<std::string_view, 4> kBucketLabels = {"capybara", "translation",
                                                           "synthesized", "song"};
constexpr std::array<std::string_view, 7> kPromptLangLabels = {
    "sardinian", "italian", "english", "spanish", "portuguese", "french", "none"};

// Assignment order for the exact per-language blocks; the remainder split
// happens after these.
constexpr std::array<PromptLang, 5> kTargetOrder = {PromptLang::italian, PromptLang::english,
                                                    PromptLang::spanish, PromptLang::portuguese,
                                                    PromptLang::french};

}  // namespace

std::string_view role_label(Role role) { return kRoleLabels[static_cast<size_t>(role)]; }

std::optional<Role> parse_role(std::string_view label) {
    for (size_t i = 0; i < kRoleLabels.size(); ++i) {
        if (kRoleLabels[i] == label) return static_cast<Role>(i);
    }
    return std::nullopt;
}

std::string_view bucket_label(Bucket bucket) { return kBucketLabels[static_cast<size_t>(bucket)]; }

std::optional<Bucket> parse_bucket(std::string_view label) {
    for (size_t i = 0; i < kBucketLabels.size(); ++i) {
        if (kBucketLabels[i] == label) return static_cast<Bucket>(i);
    }
    return std::nullopt;
}

std::string_view prompt_lang_label(PromptLang lang) {
    return kPromptLangLabels[static_cast<size_t>(lang)];
}

std::optional<PromptLang> parse_prompt_lang(std::string_view label) {
    for (size_t i = 0; i < kPromptLangLabels.size(); ++i) {
        if (kPromptLangLabels[i] == label) return static_cast<PromptLang>(i);
    }
    return std::nullopt;
}

void validate_pair(const InstructionPair& pair) {
    if (pair.id.empty()) throw validation_error("instruction pair has empty id");
    if (pair.turns.empty()) {
        throw validation_error("instruction pair '" + pair.id + "' has no turns");
    }
    size_t i = 0;
    if (pair.turns[0].role == Role::system) i = 1;
    bool any_assistant = false;
    Role expected = Role::user;
    for (; i < pair.turns.size(); ++i) {
        Role role = pair.turns[i].role;
        if (role == Role::system) {
            throw validation_error("instruction pair '" + pair.id +
                                   "': system turn only allowed in first position");
        }
        if (role != expected) {
            throw validation_error("instruction pair '" + pair.id +
                                   "': turns must alternate user/assistant");
        }
        if (role == Role::assistant) any_assistant = true;
        expected = expected == Role::user ? Role::assistant : Role::user;
    }
    if (!any_assistant) {
        throw validation_error("instruction pair '" + pair.id + "' has no assistant turn");
    }
}

SerializedExample serialize_chatml(const InstructionPair& pair, const Tokenizer& tokenizer,
                                   const ChatMarkers& markers) {
    validate_pair(pair);
    if (markers.turn_start.empty() || markers.turn_end.empty()) {
        throw validation_error("chat markers must be non-empty");
    }

    SerializedExample out;
    out.id = pair.id;

    auto emit = [&](const std::string& fragment, bool in_loss) {
        if (fragment.empty()) return;
        std::vector<Tokenizer::TokenId> ids = tokenizer.encode(fragment);
        out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
        out.loss_mask.insert(out.loss_mask.end(), ids.size(), in_loss ? 1 : 0);
    };

    for (const Turn& turn : pair.turns) {
        const bool is_assistant = turn.role == Role::assistant;
        emit(markers.turn_start, false);
        emit(std::string(role_label(turn.role)), false);
        emit("\n", false);
        emit(turn.text, is_assistant);
        emit(markers.turn_end, is_assistant);
        emit("\n", false);
    }
    return out;
}

PairDedupResult dedup_pairs(std::vector<InstructionPair> pairs) {
    PairDedupResult result;
    std::unordered_map<std::string, std::string> seen;  // content key -> kept id
    result.kept.reserve(pairs.size());
    for (InstructionPair& pair : pairs) {
        std::string key;
        for (const Turn& turn : pair.turns) {
            key += corpus::normalize_text(turn.text);
            key += '\x1e';  // separator outside normalized text (never survives collapse)
        }
        auto [it, inserted] = seen.emplace(std::move(key), pair.id);
        if (inserted) {
            result.kept.push_back(std::move(pair));
        } else {
            result.dropped.push_back({pair.id, "exact-duplicate", it->second});
        }
    }
    return result;
}

std::vector<InstructionPair> upsample_bucket(std::vector<InstructionPair> pairs, Bucket bucket,
                                             size_t factor) {
    if (factor == 0) throw validation_error("upsample factor must be >= 1");
    std::vector<InstructionPair> copies;
    for (const InstructionPair& pair : pairs) {
        if (pair.bucket != bucket) continue;
        for (size_t n = 1; n < factor; ++n) {
            InstructionPair copy = pair;
            copy.id += "#up" + std::to_string(n);
            copies.push_back(std::move(copy));
        }
    }
    pairs.insert(pairs.end(), std::make_move_iterator(copies.begin()),
                 std::make_move_iterator(copies.end()));
    return pairs;
}

std::vector<InstructionPair> assign_system_prompts(
    std::vector<InstructionPair> pairs, const std::map<PromptLang, size_t>& targets,
    uint64_t seed, double sardinian_share) {
    if (sardinian_share < 0.0 || sardinian_share > 1.0) {
        throw validation_error("sardinian_share must lie in [0, 1]");
    }
    size_t target_total = 0;
    for (const auto& [lang, count] : targets) {
        if (lang == PromptLang::sardinian || lang == PromptLang::none) {
            throw validation_error(
                "prompt targets name only non-Sardinian languages; the remainder covers "
                "sardinian/none");
        }
        target_total += count;
    }
    if (target_total > pairs.size()) {
        throw validation_error("prompt targets exceed pool size (" +
                               std::to_string(target_total) + " > " +
                               std::to_string(pairs.size()) + ")");
    }

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Xoshiro256 gen(seed);
    fisher_yates(order, gen);

    size_t pos = 0;
    for (PromptLang lang : kTargetOrder) {
        auto it = targets.find(lang);
        if (it == targets.end()) continue;
        for (size_t n = 0; n < it->second; ++n) pairs[order[pos++]].system_prompt_lang = lang;
    }

    const size_t n_rem = pairs.size() - pos;
    const auto n_none = static_cast<size_t>(std::llround((1.0 - sardinian_share) * n_rem));
    const size_t n_sard = n_rem - n_none;
    for (size_t n = 0; n < n_sard; ++n) {
        pairs[order[pos++]].system_prompt_lang = PromptLang::sardinian;
    }
    for (size_t n = 0; n < n_none; ++n) pairs[order[pos++]].system_prompt_lang = PromptLang::none;
    return pairs;
}

std::vector<InstructionPair> apply_system_prompts(
    std::vector<InstructionPair> pairs, const std::map<PromptLang, std::string>& prompt_texts) {
    for (InstructionPair& pair : pairs) {
        const bool has_system = !pair.turns.empty() && pair.turns[0].role == Role::system;
        if (pair.system_prompt_lang == PromptLang::none) {
            if (has_system) pair.turns.erase(pair.turns.begin());
            continue;
        }
        auto it = prompt_texts.find(pair.system_prompt_lang);
        if (it == prompt_texts.end()) continue;
        if (has_system) {
            pair.turns[0].text = it->second;
        } else {
            pair.turns.insert(pair.turns.begin(), Turn{Role::system, it->second});
        }
    }
    return pairs;
}

PoolStats pool_stats(const std::vector<InstructionPair>& pairs, const Tokenizer& tokenizer) {
    PoolStats stats;
    stats.pair_count = pairs.size();
    for (const InstructionPair& pair : pairs) {
        stats.bucket_counts[std::string(bucket_label(pair.bucket))] += 1;
        stats.prompt_histogram[std::string(prompt_lang_label(pair.system_prompt_lang))] += 1;
        for (const Turn& turn : pair.turns) {
            if (!turn.text.empty()) stats.token_total += tokenizer.count_tokens(turn.text);
        }
    }
    return stats;
}

namespace {

json stats_to_json(const PoolStats& stats) {
    return json{{"pair_count", stats.pair_count},
                {"bucket_counts", stats.bucket_counts},
                {"prompt_histogram", stats.prompt_histogram},
                {"token_total", stats.token_total}};
}

}  // namespace

void PoolManifest::check() const {
    if (final.pair_count != deduped_count + upsampled_additions) {
        throw validation_error("pool manifest inconsistent: final pair count " +
                               std::to_string(final.pair_count) + " != deduped " +
                               std::to_string(deduped_count) + " + additions " +
                               std::to_string(upsampled_additions));
    }
    size_t histogram_total = 0;
    for (const auto& [label, count] : final.prompt_histogram) histogram_total += count;
    if (histogram_total != final.pair_count) {
        throw validation_error("pool manifest inconsistent: prompt histogram sums to " +
                               std::to_string(histogram_total) + ", expected " +
                               std::to_string(final.pair_count));
    }
}

std::string PoolManifest::to_json_string() const {
    check();
    json doc{{"raw", stats_to_json(raw)},
             {"deduped_count", deduped_count},
             {"upsampled_additions", upsampled_additions},
             {"final", stats_to_json(final)}};
    return doc.dump(2) + "\n";
}

std::vector<InstructionPair> read_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open pairs file: " + path);
    std::vector<InstructionPair> pairs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": invalid JSON object");
        }
        try {
            InstructionPair pair;
            pair.id = doc.at("id").get<std::string>();
            auto bucket = parse_bucket(doc.at("bucket").get<std::string>());
            if (!bucket) {
                throw validation_error("unknown bucket '" +
                                       doc.at("bucket").get<std::string>() + "'");
            }
            pair.bucket = *bucket;
            for (const json& turn_doc : doc.at("turns")) {
                auto role = parse_role(turn_doc.at("role").get<std::string>());
                if (!role) {
                    throw validation_error("unknown role '" +
                                           turn_doc.at("role").get<std::string>() + "'");
                }
                pair.turns.push_back({*role, turn_doc.at("text").get<std::string>()});
            }
            validate_pair(pair);
            pairs.push_back(std::move(pair));
        } catch (const json::exception& e) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const validation_error& e) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return pairs;
}

void write_serialized_jsonl(const std::string& path,
                            const std::vector<SerializedExample>& examples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open output file: " + path);
    for (const SerializedExample& example : examples) {
        json doc{{"id", example.id},
                 {"token_ids", example.token_ids},
                 {"loss_mask", example.loss_mask}};
        out << doc.dump() << "\n";
    }
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace adaptkit::sft
