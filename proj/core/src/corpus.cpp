#include "adaptkit/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "adaptkit/errors.hpp"
#include "adaptkit/parallel.hpp"
#include "adaptkit/prng.hpp"
#include "adaptkit/unicode.hpp"

namespace adaptkit::corpus {

using nlohmann::json;

namespace {

constexpr std::string_view kSourceLabels[] = {
    "web", "wikipedia", "glotcc", "books", "poetry", "bilingual", "replay", "dictionary",
};

// Canonical lowercase language names. Unrecognized labels pass through
// lowercased so the retain/drop sets stay the single point of policy.
std::string canonical_language(std::string_view label) {
    std::string lower;
    lower.reserve(label.size());
    for (const char c : label) {
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    static const std::unordered_map<std::string, std::string> aliases = {
        {"it", "italian"},   {"ita", "italian"},    {"es", "spanish"},   {"spa", "spanish"},
        {"pt", "portuguese"}, {"por", "portuguese"}, {"ca", "catalan"},   {"cat", "catalan"},
        {"sc", "sardinian"}, {"srd", "sardinian"},  {"en", "english"},   {"eng", "english"},
        {"de", "german"},    {"deu", "german"},     {"ger", "german"},   {"fr", "french"},
        {"fra", "french"},   {"fre", "french"},
    };
    const auto it = aliases.find(lower);
    return it == aliases.end() ? lower : it->second;
}

bool in_keep_set(const std::string& lang) {
    return lang == "italian" || lang == "spanish" || lang == "portuguese" ||
           lang == "catalan" || lang == "sardinian";
}

bool in_drop_set(const std::string& lang) {
    return lang == "english" || lang == "german" || lang == "french";
}

json bucket_json(const BucketStats& stats) {
    return json{{"documents", stats.documents}, {"tokens", stats.tokens}};
}

}  // namespace

std::string_view source_label(Source source) {
    return kSourceLabels[static_cast<size_t>(source)];
}

std::optional<Source> parse_source(std::string_view label) {
    for (size_t i = 0; i < std::size(kSourceLabels); ++i) {
        if (kSourceLabels[i] == label) return static_cast<Source>(i);
    }
    return std::nullopt;
}

bool is_replay(Source source) { return source == Source::replay; }

std::string normalize_text(std::string_view text, bool preserve_linebreaks) {
    const std::vector<uint32_t> cps = uni::to_codepoints(uni::nfc(text));

    std::vector<uint32_t> out;
    out.reserve(cps.size());
    if (!preserve_linebreaks) {
        bool in_run = false;
        for (const uint32_t cp : cps) {
            if (uni::is_whitespace(cp)) {
                in_run = true;
                continue;
            }
            if (in_run && !out.empty()) out.push_back(' ');
            in_run = false;
            out.push_back(cp);
        }
    } else {
        // \r\n and \r count as line breaks; collapsing applies within lines.
        std::vector<std::vector<uint32_t>> lines(1);
        for (size_t i = 0; i < cps.size(); ++i) {
            if (cps[i] == '\r') {
                if (i + 1 < cps.size() && cps[i + 1] == '\n') ++i;
                lines.emplace_back();
            } else if (cps[i] == '\n') {
                lines.emplace_back();
            } else {
                lines.back().push_back(cps[i]);
            }
        }
        std::vector<std::vector<uint32_t>> trimmed;
        trimmed.reserve(lines.size());
        for (const auto& line : lines) {
            std::vector<uint32_t> t;
            bool in_run = false;
            for (const uint32_t cp : line) {
                if (uni::is_whitespace(cp)) {
                    in_run = true;
                    continue;
                }
                if (in_run && !t.empty()) t.push_back(' ');
                in_run = false;
                t.push_back(cp);
            }
            trimmed.push_back(std::move(t));
        }
        // Strip leading and trailing blank lines, keep interior ones.
        size_t first = 0;
        size_t last = trimmed.size();
        while (first < last && trimmed[first].empty()) ++first;
        while (last > first && trimmed[last - 1].empty()) --last;
        for (size_t i = first; i < last; ++i) {
            if (i > first) out.push_back('\n');
            out.insert(out.end(), trimmed[i].begin(), trimmed[i].end());
        }
    }
    return uni::from_codepoints(out);
}

FilterDecision filter_language(const Document& doc, const LanguageClassifier& classifier) {
    FilterDecision decision;
    decision.doc_id = doc.id;

    std::optional<LangPrediction> prediction;
    if (doc.lang_hint.has_value()) {
        prediction = LangPrediction{*doc.lang_hint, 1.0};
    } else {
        try {
            prediction = classifier.classify(doc.text);
        } catch (...) {
            prediction = std::nullopt;
            decision.warning = true;
            decision.reason = "keep-classifier-failure";
        }
    }

    if (!prediction.has_value()) {
        decision.keep = true;
        decision.label = "unknown";
        if (decision.reason.empty()) decision.reason = "keep-unknown-language";
        decision.warning = true;
        return decision;
    }

    decision.label = canonical_language(prediction->label);
    decision.confidence = prediction->confidence;
    if (in_drop_set(decision.label)) {
        decision.keep = false;
        decision.reason = "drop-excluded-language";
    } else if (in_keep_set(decision.label)) {
        decision.keep = true;
        decision.reason = "keep-listed-language";
    } else {
        decision.keep = true;
        decision.reason = "keep-unlisted-language";
    }
    return decision;
}

FilterResult filter_documents(const std::vector<Document>& docs,
                              const LanguageClassifier& classifier) {
    FilterResult result;
    result.decisions.reserve(docs.size());
    for (const Document& doc : docs) {
        FilterDecision decision = filter_language(doc, classifier);
        if (decision.keep) {
            result.kept.push_back(doc);
        } else {
            result.dropped.push_back({doc.id, decision.reason, std::nullopt});
        }
        result.decisions.push_back(std::move(decision));
    }
    return result;
}

NormalizeResult normalize_documents(std::vector<Document> docs, unsigned workers) {
    parallel_for(docs.size(), workers, [&](size_t i) {
        const bool preserve = docs[i].source == Source::poetry;
        docs[i].text = normalize_text(docs[i].text, preserve);
    });
    NormalizeResult result;
    for (auto& doc : docs) {
        if (doc.text.empty()) {
            result.dropped.push_back({doc.id, "empty-after-normalization", std::nullopt});
        } else {
            result.kept.push_back(std::move(doc));
        }
    }
    return result;
}

NormalizeResult drop_flagged_sources(std::vector<Document> docs,
                                     const std::vector<Source>& drop_sources) {
    NormalizeResult result;
    for (auto& doc : docs) {
        const bool flagged =
            std::find(drop_sources.begin(), drop_sources.end(), doc.source) != drop_sources.end();
        if (flagged) {
            result.dropped.push_back({doc.id, "flagged-source", std::nullopt});
        } else {
            result.kept.push_back(std::move(doc));
        }
    }
    return result;
}

DedupResult dedup_documents(std::vector<Document> docs) {
    DedupResult result;
    std::unordered_map<std::string, std::string> first_seen;  // text -> kept id
    first_seen.reserve(docs.size());
    for (auto& doc : docs) {
        const auto [it, inserted] = first_seen.emplace(doc.text, doc.id);
        if (inserted) {
            result.kept.push_back(std::move(doc));
        } else {
            result.dropped.push_back({doc.id, "exact-duplicate", it->second});
        }
    }
    return result;
}

std::vector<TokenChunk> chunk_document(const std::string& doc_id,
                                       const std::vector<Tokenizer::TokenId>& token_ids,
                                       size_t window, size_t overlap) {
    if (window == 0) throw validation_error("chunk_document: window must be positive");
    if (overlap >= window) {
        throw validation_error("chunk_document: overlap must be smaller than window");
    }
    if (token_ids.empty()) {
        throw validation_error("chunk_document: empty token sequence");
    }
    const size_t stride = window - overlap;
    std::vector<TokenChunk> chunks;
    size_t start = 0;
    size_t index = 0;
    while (true) {
        const size_t end = std::min(start + window, token_ids.size());
        TokenChunk chunk;
        chunk.doc_id = doc_id;
        chunk.index = index++;
        chunk.start = start;
        chunk.end = end;
        chunk.token_ids.assign(token_ids.begin() + static_cast<ptrdiff_t>(start),
                               token_ids.begin() + static_cast<ptrdiff_t>(end));
        chunks.push_back(std::move(chunk));
        if (end == token_ids.size()) break;
        start += stride;
    }
    return chunks;
}

std::vector<Document> interleave_replay(const std::vector<Document>& sardinian_docs,
                                        const std::vector<Document>& replay_docs,
                                        uint64_t seed) {
    std::vector<Document> combined;
    combined.reserve(sardinian_docs.size() + replay_docs.size());
    combined.insert(combined.end(), sardinian_docs.begin(), sardinian_docs.end());
    combined.insert(combined.end(), replay_docs.begin(), replay_docs.end());
    Xoshiro256 gen(seed);
    fisher_yates(combined, gen);
    return combined;
}

CorpusManifest corpus_stats(const std::vector<Document>& docs,
                            const std::vector<TokenChunk>& chunks,
                            const Tokenizer& tokenizer) {
    CorpusManifest manifest;
    for (const Document& doc : docs) {
        const std::string label(source_label(doc.source));
        BucketStats& bucket = manifest.buckets[label];
        bucket.documents += 1;
        const size_t tokens = tokenizer.count_tokens(doc.text);
        bucket.tokens += tokens;
        BucketStats& group = is_replay(doc.source) ? manifest.replay : manifest.sardinian;
        group.documents += 1;
        group.tokens += tokens;
    }
    manifest.combined.documents = manifest.sardinian.documents + manifest.replay.documents;
    manifest.combined.tokens = manifest.sardinian.tokens + manifest.replay.tokens;
    manifest.chunk_count = chunks.size();
    return manifest;
}

std::string CorpusManifest::to_json_string() const {
    json buckets_json = json::object();
    for (const auto& [label, stats] : buckets) {
        buckets_json[label] = bucket_json(stats);
    }
    const json j{
        {"buckets", buckets_json},
        {"chunk_count", chunk_count},
        {"combined", bucket_json(combined)},
        {"pipeline_order", pipeline_order},
        {"replay", bucket_json(replay)},
        {"sardinian", bucket_json(sardinian)},
    };
    return j.dump(2) + "\n";
}

std::vector<Document> read_documents_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::vector<Document> docs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw validation_error(path + ":" + std::to_string(lineno) +
                                   ": malformed JSON: " + e.what());
        }
        Document doc;
        try {
            doc.id = j.at("id").get<std::string>();
            doc.text = j.at("text").get<std::string>();
            const auto source = parse_source(j.at("source").get<std::string>());
            if (!source) {
                throw validation_error("unknown source label '" +
                                       j.at("source").get<std::string>() + "'");
            }
            doc.source = *source;
            if (j.contains("lang_hint") && !j.at("lang_hint").is_null()) {
                doc.lang_hint = j.at("lang_hint").get<std::string>();
            }
        } catch (const json::exception& e) {
            throw validation_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const validation_error& e) {
            throw validation_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void write_chunks_jsonl(const std::string& path, const std::vector<TokenChunk>& chunks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    for (const TokenChunk& chunk : chunks) {
        const json j{
            {"doc_id", chunk.doc_id}, {"end", chunk.end},
            {"index", chunk.index},   {"start", chunk.start},
            {"token_ids", chunk.token_ids},
        };
        out << j.dump() << "\n";
    }
    if (!out) throw io_error("write failed: " + path);
}

void write_drop_log_jsonl(const std::string& path, const std::vector<DropRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    for (const DropRecord& record : records) {
        json j{{"id", record.id}, {"reason", record.reason}};
        if (record.kept_id) j["kept_id"] = *record.kept_id;
        out << j.dump() << "\n";
    }
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace adaptkit::corpus
