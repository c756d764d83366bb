#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaptkit/corpus.hpp"
#include "adaptkit/tokenizer.hpp"

namespace adaptkit::sft {

enum class Role { system, user, assistant };
enum class Bucket { capybara, translation, synthesized, song };
enum class PromptLang { sardinian, italian, english, spanish, portuguese, french, none };

std::string_view role_label(Role role);
std::optional<Role> parse_role(std::string_view label);
std::string_view bucket_label(Bucket bucket);
std::optional<Bucket> parse_bucket(std::string_view label);
std::string_view prompt_lang_label(PromptLang lang);
std::optional<PromptLang> parse_prompt_lang(std::string_view label);

struct Turn {
    Role role = Role::user;
    std::string text;
};

struct InstructionPair {
    std::string id;
    std::vector<Turn> turns;
    Bucket bucket = Bucket::capybara;
    PromptLang system_prompt_lang = PromptLang::none;
};

// Turns must alternate user/assistant after an optional leading system turn,
// with at least one assistant turn. Throws validation_error otherwise.
void validate_pair(const InstructionPair& pair);

// Per-turn frame: start marker, role name, newline, turn text, end marker,
// newline. With the byte-level tokenizer the markers serialize as their
// literal bytes; a vocabulary tokenizer that lists the marker strings maps
// each to a single id.
struct ChatMarkers {
    std::string turn_start = "<|im_start|>";
    std::string turn_end = "<|im_end|>";
};

struct SerializedExample {
    std::string id;
    std::vector<Tokenizer::TokenId> token_ids;
    std::vector<uint8_t> loss_mask;  // 1 exactly on assistant text + its end marker
};

// Completion-only serialization: the mask is true over each assistant turn's
// text tokens and its end-of-turn marker, false everywhere else (all role
// headers, all markers of non-assistant turns, the newline after each end
// marker). Fragments are tokenized separately so mask boundaries always fall
// on token boundaries regardless of the tokenizer's vocabulary.
SerializedExample serialize_chatml(const InstructionPair& pair, const Tokenizer& tokenizer,
                                   const ChatMarkers& markers = {});

struct PairDedupResult {
    std::vector<InstructionPair> kept;
    std::vector<corpus::DropRecord> dropped;
};

// Content-only key: the normalized turn texts, in order. Bucket and prompt
// metadata are excluded so duplicates across buckets collapse.
PairDedupResult dedup_pairs(std::vector<InstructionPair> pairs);

// Every pair of `bucket` appears `factor` times: originals first (all pairs,
// input order), then the factor - 1 extra copies in input order with ids
// derived as "<id>#up<n>". factor must be >= 1.
std::vector<InstructionPair> upsample_bucket(std::vector<InstructionPair> pairs, Bucket bucket,
                                             size_t factor);

// Exact per-language targets for non-Sardinian system prompts, selected by a
// seeded shuffle of pair indices. The remainder is split between a Sardinian
// prompt and no prompt at all by `sardinian_share` (rounded, deterministic).
std::vector<InstructionPair> assign_system_prompts(
    std::vector<InstructionPair> pairs, const std::map<PromptLang, size_t>& targets,
    uint64_t seed, double sardinian_share = 0.95);

// Materializes the assignment: prepends (or replaces) the system turn with
// the configured text for the pair's prompt language; strips it for `none`.
// Pairs whose language has no configured text are left untouched.
std::vector<InstructionPair> apply_system_prompts(
    std::vector<InstructionPair> pairs, const std::map<PromptLang, std::string>& prompt_texts);

struct PoolStats {
    size_t pair_count = 0;
    std::map<std::string, size_t> bucket_counts;
    std::map<std::string, size_t> prompt_histogram;
    size_t token_total = 0;  // content tokens over all turns, markers excluded
};

PoolStats pool_stats(const std::vector<InstructionPair>& pairs, const Tokenizer& tokenizer);

struct PoolManifest {
    PoolStats raw;
    size_t deduped_count = 0;
    size_t upsampled_additions = 0;
    PoolStats final;

    // final.pair_count == deduped_count + upsampled_additions, and the prompt
    // histogram must sum to the final count.
    void check() const;
    std::string to_json_string() const;
};

// JSONL, one pair per line: {"id", "turns": [{"role", "text"}], "bucket"}.
std::vector<InstructionPair> read_pairs_jsonl(const std::string& path);
void write_serialized_jsonl(const std::string& path,
                            const std::vector<SerializedExample>& examples);

}  // namespace adaptkit::sft
