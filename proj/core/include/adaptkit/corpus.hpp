#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaptkit/tokenizer.hpp"

namespace adaptkit::corpus {

// Source buckets of the pretraining corpus. `dictionary` marks repetitive
// template content that is recognized on ingestion and dropped by flag
// rather than by content heuristic. `replay` is related-language text mixed
// in against forgetting; everything else counts as target-language text.
enum class Source {
    web,
    wikipedia,
    glotcc,
    books,
    poetry,
    bilingual,
    replay,
    dictionary,
};

std::string_view source_label(Source source);
std::optional<Source> parse_source(std::string_view label);
bool is_replay(Source source);

struct Document {
    std::string id;
    std::string text;
    Source source = Source::web;
    std::optional<std::string> lang_hint;
};

struct DropRecord {
    std::string id;
    std::string reason;
    std::optional<std::string> kept_id;
};

// One window of token ids cut from a document. `start`/`end` are token
// positions in the parent document's id sequence, end exclusive.
struct TokenChunk {
    std::string doc_id;
    size_t index = 0;
    size_t start = 0;
    size_t end = 0;
    std::vector<Tokenizer::TokenId> token_ids;
};

struct BucketStats {
    size_t documents = 0;
    size_t tokens = 0;
};

struct CorpusManifest {
    std::map<std::string, BucketStats> buckets;
    BucketStats sardinian;
    BucketStats replay;
    BucketStats combined;
    size_t chunk_count = 0;
    // Stage order the pipeline applied, recorded for reproducibility.
    std::string pipeline_order = "normalize,filter,dedup";

    std::string to_json_string() const;
};

// NFC, whitespace runs collapsed to single spaces, ends trimmed. With
// `preserve_linebreaks` the line structure survives and collapsing applies
// within each line; used for poetry so verse boundaries are not destroyed.
std::string normalize_text(std::string_view text, bool preserve_linebreaks = false);

struct LangPrediction {
    std::string label;
    double confidence = 0.0;
};

// Injected language-identification interface. Implementations return
// nullopt (or throw) when they cannot classify; the filter treats that as
// keep-with-warning, since misclassification of the target language by
// stock detectors is expected and exploited rather than fought.
class LanguageClassifier {
public:
    virtual ~LanguageClassifier() = default;
    virtual std::optional<LangPrediction> classify(std::string_view text) const = 0;
};

// Classifier that never recognizes anything. Stands in for detectors with
// no target-language support; every document falls through to keep.
class NullClassifier final : public LanguageClassifier {
public:
    std::optional<LangPrediction> classify(std::string_view) const override {
        return std::nullopt;
    }
};

struct FilterDecision {
    std::string doc_id;
    bool keep = true;
    std::string label;
    double confidence = 0.0;
    std::string reason;
    bool warning = false;
};

// Keep when the label is one of the retained Romance languages (the target
// language or a near neighbor the detectors confuse it with) or when the
// classifier is unsure; drop only on a confident excluded-language label.
// A present lang_hint is trusted as a cached classifier output.
FilterDecision filter_language(const Document& doc, const LanguageClassifier& classifier);

struct FilterResult {
    std::vector<Document> kept;
    std::vector<DropRecord> dropped;
    std::vector<FilterDecision> decisions;
};

FilterResult filter_documents(const std::vector<Document>& docs,
                              const LanguageClassifier& classifier);

struct NormalizeResult {
    std::vector<Document> kept;
    std::vector<DropRecord> dropped;
};

// Normalizes every document (poetry keeps line breaks) and drops documents
// that come out empty. Parallel over documents, output in input order.
NormalizeResult normalize_documents(std::vector<Document> docs, unsigned workers = 1);

// Drops documents whose source is in `drop_sources` (ingestion flag).
NormalizeResult drop_flagged_sources(std::vector<Document> docs,
                                     const std::vector<Source>& drop_sources);

struct DedupResult {
    std::vector<Document> kept;
    std::vector<DropRecord> dropped;
};

// Exact-match on the document text, first occurrence in input order wins.
// Inputs are expected to be normalized already.
DedupResult dedup_documents(std::vector<Document> docs);

// Overlapping windows with stride window - overlap. Chunks start at 0, s,
// 2s, ...; the final chunk ends exactly at the document end and is only
// emitted if it reaches past the previous chunk. Every non-final chunk has
// exactly `window` tokens.
std::vector<TokenChunk> chunk_document(const std::string& doc_id,
                                       const std::vector<Tokenizer::TokenId>& token_ids,
                                       size_t window = 4096, size_t overlap = 128);

// Permutation of sardinian_docs + replay_docs by seeded Fisher-Yates. No
// language tag is attached; the order is all the mixing there is.
std::vector<Document> interleave_replay(const std::vector<Document>& sardinian_docs,
                                        const std::vector<Document>& replay_docs,
                                        uint64_t seed);

CorpusManifest corpus_stats(const std::vector<Document>& docs,
                            const std::vector<TokenChunk>& chunks,
                            const Tokenizer& tokenizer);

// JSONL, one document per line: {"id", "text", "source", "lang_hint"?}.
// Parse failures name the offending line.
std::vector<Document> read_documents_jsonl(const std::string& path);

void write_chunks_jsonl(const std::string& path, const std::vector<TokenChunk>& chunks);
void write_drop_log_jsonl(const std::string& path, const std::vector<DropRecord>& records);

}  // namespace adaptkit::corpus
