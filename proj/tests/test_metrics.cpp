#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "adaptkit/errors.hpp"
#include "adaptkit/metrics.hpp"
#include "adaptkit/prng.hpp"
#include "adaptkit/unicode.hpp"

using adaptkit::SplitMix64;
using adaptkit::Xoshiro256;
using adaptkit::validation_error;
namespace metrics = adaptkit::metrics;
namespace unicode = adaptkit::uni;
using metrics::Metric;
using metrics::SentencePair;

namespace {

// Brute-force reference scorers, written from the score definitions with
// naive data structures. They share only the tokenizer with the production
// code; counting, clipping, pooling and the means are all re-derived here.

template <typename Item>
std::map<std::vector<Item>, size_t> ngram_counts(const std::vector<Item>& items, size_t n) {
    std::map<std::vector<Item>, size_t> counts;
    if (items.size() < n) return counts;
    for (size_t i = 0; i + n <= items.size(); ++i) {
        counts[std::vector<Item>(items.begin() + static_cast<ptrdiff_t>(i),
                                 items.begin() + static_cast<ptrdiff_t>(i + n))]++;
    }
    return counts;
}

double oracle_bleu(const std::vector<SentencePair>& pairs) {
    size_t hyp_len = 0;
    size_t ref_len = 0;
    double matched[5] = {0, 0, 0, 0, 0};
    double total[5] = {0, 0, 0, 0, 0};
    for (const auto& pair : pairs) {
        const auto hyp = metrics::bleu_tokenize(pair.hypothesis);
        const auto ref = metrics::bleu_tokenize(pair.reference);
        hyp_len += hyp.size();
        ref_len += ref.size();
        for (size_t n = 1; n <= 4; ++n) {
            const auto hc = ngram_counts(hyp, n);
            const auto rc = ngram_counts(ref, n);
            for (const auto& [gram, count] : hc) {
                total[n] += static_cast<double>(count);
                auto it = rc.find(gram);
                if (it != rc.end()) {
                    matched[n] += static_cast<double>(std::min(count, it->second));
                }
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    for (size_t n = 1; n <= 4; ++n) {
        if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;
        log_sum += std::log(matched[n] / total[n]);
    }
    const double bp =
        std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
    return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::vector<uint32_t> squeezed_codepoints(const std::string& text) {
    std::vector<uint32_t> out;
    for (uint32_t cp : unicode::to_codepoints(text)) {
        if (!unicode::is_whitespace(cp)) out.push_back(cp);
    }
    return out;
}

double oracle_chrf(const std::vector<SentencePair>& pairs) {
    constexpr double kBeta2 = 4.0;
    std::vector<double> precisions;
    std::vector<double> recalls;
    for (size_t n = 1; n <= 6; ++n) {
        double matched = 0.0;
        double hyp_total = 0.0;
        double ref_total = 0.0;
        for (const auto& pair : pairs) {
            const auto hc = ngram_counts(squeezed_codepoints(pair.hypothesis), n);
            const auto rc = ngram_counts(squeezed_codepoints(pair.reference), n);
            for (const auto& [gram, count] : hc) hyp_total += static_cast<double>(count);
            for (const auto& [gram, count] : rc) ref_total += static_cast<double>(count);
            for (const auto& [gram, count] : hc) {
                auto it = rc.find(gram);
                if (it != rc.end()) {
                    matched += static_cast<double>(std::min(count, it->second));
                }
            }
        }
        if (ref_total == 0.0) continue;
        precisions.push_back(hyp_total == 0.0 ? 0.0 : matched / hyp_total);
        recalls.push_back(matched / ref_total);
    }
    if (precisions.empty()) return 0.0;
    double p = 0.0;
    double r = 0.0;
    for (double v : precisions) p += v;
    for (double v : recalls) r += v;
    p /= static_cast<double>(precisions.size());
    r /= static_cast<double>(recalls.size());
    if (p + r == 0.0) return 0.0;
    return 100.0 * (1.0 + kBeta2) * p * r / (kBeta2 * p + r);
}

std::string random_sentence(Xoshiro256& gen, size_t min_words) {
    static const char* kWords[] = {"sa",    "limba", "sarda", "est", "una",  "antiga",
                                   "de",    "cantu", "in",    "s",   "isula", "faeddada",
                                   "\xc3\xa0", "\xc2\xab", "\xc2\xbb", "."};
    std::string out;
    const size_t n = min_words + gen.next_below(10);
    for (size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += kWords[gen.next_below(16)];
    }
    return out;
}

}  // namespace

TEST_CASE("bleu tokenization isolates punctuation") {
    const std::vector<std::string> tokens = metrics::bleu_tokenize("Nois, sos sardos!");
    const std::vector<std::string> expected = {"Nois", ",", "sos", "sardos", "!"};
    CHECK(tokens == expected);

    const std::vector<std::string> quoted = metrics::bleu_tokenize("\xc2\xabsu libru\xc2\xbb");
    const std::vector<std::string> quoted_expected = {"\xc2\xab", "su", "libru", "\xc2\xbb"};
    CHECK(quoted == quoted_expected);

    CHECK(metrics::bleu_tokenize("").empty());
    CHECK(metrics::bleu_tokenize("  \t\n").empty());
    CHECK(metrics::bleu_tokenize("Casa") != metrics::bleu_tokenize("casa"));
}

TEST_CASE("bleu matches hand-derived values") {
    CHECK(metrics::bleu({{"a b c d", "a b c d", ""}}) == 100.0);
    CHECK(metrics::bleu({{"a b c d", "a b c d e", ""}}) ==
          doctest::Approx(77.880078307140494).epsilon(1e-12));
    CHECK(metrics::bleu({{"a a b c d", "a b c d", ""}}) ==
          doctest::Approx(66.874030497642195).epsilon(1e-12));
    // corpus pooling is not a per-sentence average: the second pair rescues
    // the first one's empty 3-gram pool
    CHECK(metrics::bleu({{"a b c d", "a b x d", ""}, {"a b c d e f", "a b c d e f", ""}}) ==
          doctest::Approx(76.21991222319221).epsilon(1e-12));
    CHECK(metrics::bleu({{"a b c d", "a b c d e", ""}, {"x y", "x y", ""}}) ==
          doctest::Approx(84.648172489061409).epsilon(1e-12));

    CHECK(metrics::bleu({{"x y z w", "a b c d", ""}}) == 0.0);
    CHECK(metrics::bleu({{"a b c a b", "a b c x y", ""}}) == 0.0);  // no 4-gram match
    CHECK(metrics::bleu({{"", "a b c d", ""}}) == 0.0);
    CHECK(metrics::bleu({{"a b c", "a b c", ""}}) == 0.0);  // too short for 4-grams
}

TEST_CASE("chrf matches hand-derived values") {
    CHECK(metrics::chrf({{"sa limba", "sa limba", ""}}) == 100.0);
    CHECK(metrics::chrf({{"abc", "abd", ""}}) ==
          doctest::Approx(700.0 / 18.0).epsilon(1e-12));
    // beta = 2 weights recall: a truncated hypothesis loses far more than an
    // inflated one
    CHECK(metrics::chrf({{"ab", "abcd", ""}}) ==
          doctest::Approx(1250.0 / 53.0).epsilon(1e-12));
    CHECK(metrics::chrf({{"abcd", "ab", ""}}) == doctest::Approx(78.125).epsilon(1e-12));
    // whitespace is invisible to chrf
    CHECK(metrics::chrf({{"a b c", "abc", ""}}) == 100.0);
    CHECK(metrics::chrf({{"", "abc", ""}}) == 0.0);
    CHECK(metrics::chrf({{"xyz", "abc", ""}}) == 0.0);
}

TEST_CASE("empty reference is rejected") {
    CHECK_THROWS_AS(metrics::bleu({{"a", "", ""}}), validation_error);
    CHECK_THROWS_AS(metrics::chrf({{"a", "", ""}}), validation_error);
    CHECK_THROWS_AS(metrics::bleu({}), validation_error);
}

TEST_CASE("scores agree with the brute-force oracle on random corpora") {
    Xoshiro256 gen(2024);
    for (int corpus = 0; corpus < 50; ++corpus) {
        std::vector<SentencePair> pairs;
        const size_t n = 1 + gen.next_below(10);
        for (size_t i = 0; i < n; ++i) {
            SentencePair pair;
            pair.hypothesis = gen.next_below(8) == 0 ? "" : random_sentence(gen, 0);
            pair.reference = random_sentence(gen, 1);
            pairs.push_back(std::move(pair));
        }
        const double b = metrics::bleu(pairs);
        const double c = metrics::chrf(pairs);
        CHECK(std::abs(b - oracle_bleu(pairs)) < 1e-9);
        CHECK(std::abs(c - oracle_chrf(pairs)) < 1e-9);
        CHECK(b >= 0.0);
        CHECK(b <= 100.0);
        CHECK(c >= 0.0);
        CHECK(c <= 100.0);
    }

    // identical corpora pin both scales
    std::vector<SentencePair> same;
    for (int i = 0; i < 5; ++i) {
        const std::string text = random_sentence(gen, 4);
        same.push_back({text, text, ""});
    }
    CHECK(metrics::bleu(same) == 100.0);
    CHECK(metrics::chrf(same) == 100.0);
}

TEST_CASE("bootstrap is deterministic and matches its sampling recipe") {
    // hypotheses are near-copies of their references so every resample scores
    // strictly between 0 and 100 and the spread is nonzero
    Xoshiro256 gen(11);
    std::vector<SentencePair> pairs;
    for (int i = 0; i < 20; ++i) {
        const std::string ref = random_sentence(gen, 5);
        pairs.push_back({"su " + ref, ref, "x-to-y"});
    }

    const auto base = metrics::bootstrap_stderr(pairs, Metric::bleu, 200, 42, 1);
    CHECK(base.value == metrics::bleu(pairs));
    CHECK(base.n_resamples == 200);
    CHECK(base.seed == 42);
    CHECK_FALSE(base.low_sample_warning);
    CHECK(base.std_err > 0.0);

    for (size_t workers : {size_t{1}, size_t{2}, size_t{4}, size_t{9}}) {
        const auto again = metrics::bootstrap_stderr(pairs, Metric::bleu, 200, 42, workers);
        CHECK(again.value == base.value);
        CHECK(again.std_err == base.std_err);
    }

    // replay the documented index recipe and recompute the dispersion
    const size_t n = pairs.size();
    SplitMix64 master(42);
    std::vector<double> scores;
    for (size_t r = 0; r < 200; ++r) {
        SplitMix64 stream(master.next());
        std::vector<SentencePair> resample;
        for (size_t i = 0; i < n; ++i) resample.push_back(pairs[stream.next() % n]);
        scores.push_back(metrics::bleu(resample));
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    CHECK(base.std_err == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

    // the point estimate ignores resampling parameters
    const auto more = metrics::bootstrap_stderr(pairs, Metric::chrf, 50, 7, 1);
    CHECK(more.value == metrics::chrf(pairs));
}

TEST_CASE("bootstrap degenerate cases") {
    std::vector<SentencePair> same;
    for (int i = 0; i < 10; ++i) same.push_back({"sa limba sarda", "sa limba sarda", ""});
    const auto score = metrics::bootstrap_stderr(same, Metric::chrf, 100, 1, 2);
    CHECK(score.value == 100.0);
    CHECK(score.std_err == 0.0);
    CHECK_FALSE(score.low_sample_warning);

    const std::vector<SentencePair> one = {{"abc", "abd", ""}};
    const auto single = metrics::bootstrap_stderr(one, Metric::chrf, 100, 1, 1);
    CHECK(single.std_err == 0.0);
    CHECK(single.low_sample_warning);
    CHECK(single.value == doctest::Approx(700.0 / 18.0).epsilon(1e-12));

    CHECK_THROWS_AS(metrics::bootstrap_stderr(one, Metric::bleu, 1, 1, 1), validation_error);
}

TEST_CASE("perplexity normalization") {
    CHECK(metrics::normalize_ppl(1.54, 3.0) == doctest::Approx(3.652264).epsilon(1e-12));
    CHECK(std::abs(metrics::normalize_ppl(1.54, 3.0) - 3.652) < 1e-3);
    CHECK(metrics::normalize_ppl(6.76, 1.0) == 6.76);
    CHECK(metrics::normalize_ppl(1.0, 5.0) == 1.0);

    // k >= 1 and ppl_token >= 1 by construction of the quantities
    CHECK_THROWS_AS(metrics::normalize_ppl(0.9, 2.0), validation_error);
    CHECK_THROWS_AS(metrics::normalize_ppl(1.2, 0.5), validation_error);

    // rescaling is monotone in k and invertible
    CHECK(metrics::normalize_ppl(1.54, 3.0) > metrics::normalize_ppl(1.54, 2.0));
    const double up = metrics::normalize_ppl(2.3, 2.5);
    CHECK(std::pow(up, 1.0 / 2.5) == doctest::Approx(2.3).epsilon(1e-12));

    CHECK(metrics::ppl_from_nll(0.0) == 1.0);
    CHECK(metrics::ppl_from_nll(std::log(2.0)) == doctest::Approx(2.0).epsilon(1e-12));
    // a negative mean NLL itself is representable, but the resulting
    // sub-unit perplexity cannot be normalized
    CHECK(metrics::ppl_from_nll(-0.5) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK_THROWS_AS(metrics::make_ppl_record(-0.5, 2.0), validation_error);

    const auto record = metrics::make_ppl_record(std::log(2.0), 2.0);
    CHECK(record.ppl_token == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(record.ppl_info == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(record.k == 2.0);
}

TEST_CASE("report renderer marks the best cell per direction") {
    metrics::MetricScore b;
    b.metric = Metric::bleu;
    metrics::MetricScore c;
    c.metric = Metric::chrf;
    auto cell = [&](double bleu_v, double bleu_e, double chrf_v, double chrf_e) {
        metrics::CellScore out;
        b.value = bleu_v;
        b.std_err = bleu_e;
        c.value = chrf_v;
        c.std_err = chrf_e;
        out.bleu = b;
        out.chrf = c;
        return out;
    };

    const std::vector<std::string> models = {"base", "cpt", "full-ft", "rslora-r256"};
    std::vector<metrics::ReportRow> rows(2);
    rows[0].direction = "en-to-sc";
    rows[0].cells = {cell(2.75, 0.19, 27.41, 0.26), cell(17.26, 0.47, 47.81, 0.39),
                     cell(21.04, 0.43, 50.20, 0.36), cell(28.47, 0.49, 56.80, 0.39)};
    rows[1].direction = "sc-to-it";
    rows[1].cells = {cell(2.90, 0.10, 33.38, 0.29), cell(16.53, 0.38, 48.83, 0.35),
                     cell(18.12, 0.41, 47.81, 0.36), std::nullopt};

    const std::string text = metrics::render_report(rows, models);
    CHECK(text.find("*28.47 / 56.80*") != std::string::npos);
    CHECK(text.find("\xe2\x80\x94") != std::string::npos);  // missing cell em dash
    CHECK(text.find("direction") != std::string::npos);
    CHECK(text.find("rslora-r256") != std::string::npos);
    // best bleu and best chrf live in different cells on the second row
    CHECK(text.find("*16.53 / 48.83*") != std::string::npos);
    CHECK(text.find("*18.12 / 47.81*") != std::string::npos);
    CHECK(text.find("*2.75") == std::string::npos);

    const std::string with_err =
        metrics::render_report(rows, models, metrics::ReportFormat::text, true);
    CHECK(with_err.find("28.47 \xc2\xb1 0.49") != std::string::npos);
    CHECK(with_err.find("56.80 \xc2\xb1 0.39") != std::string::npos);

    // byte stability
    CHECK(metrics::render_report(rows, models) == text);

    const std::string tsv = metrics::render_report(rows, models, metrics::ReportFormat::tsv);
    CHECK(tsv.find("direction\tbase\tcpt\tfull-ft\trslora-r256\n") != std::string::npos);
    CHECK(tsv.find("en-to-sc\t") != std::string::npos);

    // ties mark every holder
    std::vector<metrics::ReportRow> tie(1);
    tie[0].direction = "d";
    tie[0].cells = {cell(10.0, 0, 20.0, 0), cell(10.0, 0, 20.0, 0)};
    const std::string tied = metrics::render_report(tie, {"m1", "m2"});
    CHECK(tied.find("*10.00 / 20.00*  *10.00 / 20.00*") != std::string::npos);

    CHECK_THROWS_AS(metrics::render_report({}, models), validation_error);
    std::vector<metrics::ReportRow> ragged(1);
    ragged[0].direction = "d";
    ragged[0].cells = {cell(1, 0, 1, 0)};
    CHECK_THROWS_AS(metrics::render_report(ragged, models), validation_error);
}

TEST_CASE("pair readers validate their inputs") {
    const std::string jsonl = "test_metrics_pairs.jsonl";
    {
        std::ofstream out(jsonl, std::ios::trunc);
        out << R"({"hypothesis":"unu","reference":"unu","direction":"en-to-sc"})" << "\n";
        out << R"({"hypothesis":"","reference":"duos"})" << "\n";
    }
    const auto pairs = metrics::read_pairs_jsonl(jsonl);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].direction == "en-to-sc");
    CHECK(pairs[1].hypothesis == "");
    CHECK(pairs[1].direction == "");
    std::remove(jsonl.c_str());

    {
        std::ofstream out(jsonl, std::ios::trunc);
        out << R"({"hypothesis":"a","reference":""})" << "\n";
    }
    CHECK_THROWS_AS(metrics::read_pairs_jsonl(jsonl), validation_error);
    std::remove(jsonl.c_str());

    const std::string hyp_path = "test_metrics_hyp.txt";
    const std::string ref_path = "test_metrics_ref.txt";
    {
        std::ofstream hyp(hyp_path, std::ios::trunc);
        hyp << "unu\nduos\n";
        std::ofstream ref(ref_path, std::ios::trunc);
        ref << "unu\nduos\n";
    }
    const auto aligned = metrics::read_aligned_text(hyp_path, ref_path, "en-to-sc");
    REQUIRE(aligned.size() == 2);
    CHECK(aligned[1].reference == "duos");
    CHECK(aligned[0].direction == "en-to-sc");

    {
        std::ofstream hyp(hyp_path, std::ios::trunc);
        hyp << "unu\n";
    }
    CHECK_THROWS_AS(metrics::read_aligned_text(hyp_path, ref_path, "d"), validation_error);
    std::remove(hyp_path.c_str());
    std::remove(ref_path.c_str());
}

TEST_CASE("metric labels roundtrip") {
    CHECK(metrics::metric_label(Metric::bleu) == "bleu");
    CHECK(metrics::parse_metric("chrf") == Metric::chrf);
    CHECK_FALSE(metrics::parse_metric("rouge").has_value());
}
