#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adaptkit::metrics {

struct SentencePair {
    std::string hypothesis;
    std::string reference;  // must be non-empty
    std::string direction;
};

enum class Metric { bleu, chrf };

std::string_view metric_label(Metric metric);
std::optional<Metric> parse_metric(std::string_view label);

// Case-sensitive: every punctuation codepoint becomes its own token, then
// the text splits on Unicode whitespace.
std::vector<std::string> bleu_tokenize(const std::string& text);

// Corpus BLEU over orders 1..4: clipped modified n-gram precisions pooled
// over the whole corpus, brevity penalty min(1, exp(1 - ref_len/hyp_len)),
// geometric mean, scaled to [0, 100]. Any pooled precision of zero (counting
// an empty pool as zero) makes the score 0; no smoothing.
double bleu(const std::vector<SentencePair>& pairs);

// chrF: character n-grams of orders 1..6 over whitespace-stripped
// codepoints, precision/recall pooled per order over the corpus, orders with
// no reference n-grams excluded from both means, F with beta = 2, scaled to
// [0, 100]. An empty hypothesis contributes zero counts.
double chrf(const std::vector<SentencePair>& pairs);

struct MetricScore {
    Metric metric = Metric::bleu;
    double value = 0.0;
    double std_err = 0.0;
    size_t n_resamples = 0;
    uint64_t seed = 0;
    bool low_sample_warning = false;  // fewer than 2 pairs: stderr forced to 0
};

// Resamples the pair list with replacement n_resamples times and reports the
// population standard deviation of the resample scores; the point estimate
// always comes from the full set. Resample r draws its n indices as
// SplitMix64(s_r).next() % n where s_r is the r-th output of
// SplitMix64(seed), so the result is independent of worker count.
MetricScore bootstrap_stderr(const std::vector<SentencePair>& pairs, Metric metric,
                             size_t n_resamples, uint64_t seed, size_t workers = 1);

double ppl_from_nll(double mean_nll_nats);

// ppl_info = ppl_token^k where k is bytes per codepoint; ppl_token < 1 or
// k < 1 is rejected.
double normalize_ppl(double ppl_token, double k);

struct PerplexityRecord {
    double mean_nll = 0.0;  // nats per token
    double ppl_token = 1.0;
    double k = 1.0;  // bytes per codepoint
    double ppl_info = 1.0;
};

PerplexityRecord make_ppl_record(double mean_nll_nats, double k);

struct CellScore {
    MetricScore bleu;
    MetricScore chrf;
};

struct ReportRow {
    std::string direction;
    std::vector<std::optional<CellScore>> cells;  // one per model, in order
};

enum class ReportFormat { text, tsv };

// One row per direction, one column per model, cells "BLEU / chrF" at two
// decimals (each score "v ± e" when stderr display is on). The best BLEU and
// best chrF per direction mark their cell with surrounding asterisks; ties
// mark every holder. Missing cells render as an em dash. Output is
// byte-stable for identical input.
std::string render_report(const std::vector<ReportRow>& rows,
                          const std::vector<std::string>& models,
                          ReportFormat format = ReportFormat::text, bool show_stderr = false);

// JSONL {"hypothesis", "reference", "direction"}, one pair per line.
std::vector<SentencePair> read_pairs_jsonl(const std::string& path);

// Aligned plain-text files, one sentence per line; line counts must match.
std::vector<SentencePair> read_aligned_text(const std::string& hyp_path,
                                            const std::string& ref_path,
                                            const std::string& direction);

}  // namespace adaptkit::metrics
