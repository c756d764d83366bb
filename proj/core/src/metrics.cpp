#include "adaptkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "adaptkit/errors.hpp"
#include "adaptkit/parallel.hpp"
#include "adaptkit/prng.hpp"
#include "adaptkit/unicode.hpp"

namespace adaptkit::metrics {

namespace {

using nlohmann::json;

constexpr size_t kBleuOrder = 4;
constexpr size_t kChrfOrder = 6;
constexpr double kChrfBeta = 2.0;

void validate_pairs(const std::vector<SentencePair>& pairs) {
    if (pairs.empty()) throw validation_error("metric requires at least one sentence pair");
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].reference.empty()) {
            throw validation_error("pair " + std::to_string(i) + " has an empty reference");
        }
    }
}

// n-gram key: the id sequence packed as raw bytes
using Counts = std::unordered_map<std::string, size_t>;

void add_ngrams(const std::vector<uint32_t>& seq, size_t n, Counts& out) {
    if (seq.size() < n) return;
    std::string key(n * sizeof(uint32_t), '\0');
    for (size_t i = 0; i + n <= seq.size(); ++i) {
        std::memcpy(key.data(), seq.data() + i, n * sizeof(uint32_t));
        out[key] += 1;
    }
}

size_t total_count(const Counts& counts) {
    size_t total = 0;
    for (const auto& [key, c] : counts) total += c;
    return total;
}

size_t clipped_matches(const Counts& hyp, const Counts& ref) {
    size_t matched = 0;
    for (const auto& [key, c] : hyp) {
        auto it = ref.find(key);
        if (it != ref.end()) matched += std::min(c, it->second);
    }
    return matched;
}

std::vector<uint32_t> codepoints_no_whitespace(const std::string& text) {
    std::vector<uint32_t> out;
    for (uint32_t cp : uni::to_codepoints(text)) {
        if (!uni::is_whitespace(cp)) out.push_back(cp);
    }
    return out;
}

std::string format2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string_view metric_label(Metric metric) {
    return metric == Metric::bleu ? "bleu" : "chrf";
}

std::optional<Metric> parse_metric(std::string_view label) {
    if (label == "bleu") return Metric::bleu;
    if (label == "chrf") return Metric::chrf;
    return std::nullopt;
}

std::vector<std::string> bleu_tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (uint32_t cp : uni::to_codepoints(text)) {
        if (uni::is_whitespace(cp)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else if (uni::is_punctuation(cp)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
            std::string punct;
            uni::append_utf8(punct, cp);
            tokens.push_back(std::move(punct));
        } else {
            uni::append_utf8(current, cp);
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

double bleu(const std::vector<SentencePair>& pairs) {
    validate_pairs(pairs);

    std::unordered_map<std::string, uint32_t> token_ids;
    auto to_ids = [&](const std::string& text) {
        std::vector<uint32_t> ids;
        for (std::string& token : bleu_tokenize(text)) {
            auto [it, inserted] =
                token_ids.emplace(std::move(token), static_cast<uint32_t>(token_ids.size()));
            ids.push_back(it->second);
        }
        return ids;
    };

    size_t hyp_len = 0;
    size_t ref_len = 0;
    std::array<size_t, kBleuOrder> matched{};
    std::array<size_t, kBleuOrder> total{};
    for (const SentencePair& pair : pairs) {
        const std::vector<uint32_t> hyp = to_ids(pair.hypothesis);
        const std::vector<uint32_t> ref = to_ids(pair.reference);
        hyp_len += hyp.size();
        ref_len += ref.size();
        for (size_t n = 1; n <= kBleuOrder; ++n) {
            Counts hyp_counts;
            Counts ref_counts;
            add_ngrams(hyp, n, hyp_counts);
            add_ngrams(ref, n, ref_counts);
            matched[n - 1] += clipped_matches(hyp_counts, ref_counts);
            total[n - 1] += total_count(hyp_counts);
        }
    }

    if (hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    for (size_t n = 0; n < kBleuOrder; ++n) {
        if (matched[n] == 0 || total[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    }
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(kBleuOrder));
}

double chrf(const std::vector<SentencePair>& pairs) {
    validate_pairs(pairs);

    std::array<size_t, kChrfOrder> matched{};
    std::array<size_t, kChrfOrder> hyp_total{};
    std::array<size_t, kChrfOrder> ref_total{};
    for (const SentencePair& pair : pairs) {
        const std::vector<uint32_t> hyp = codepoints_no_whitespace(pair.hypothesis);
        const std::vector<uint32_t> ref = codepoints_no_whitespace(pair.reference);
        for (size_t n = 1; n <= kChrfOrder; ++n) {
            Counts hyp_counts;
            Counts ref_counts;
            add_ngrams(hyp, n, hyp_counts);
            add_ngrams(ref, n, ref_counts);
            matched[n - 1] += clipped_matches(hyp_counts, ref_counts);
            hyp_total[n - 1] += total_count(hyp_counts);
            ref_total[n - 1] += total_count(ref_counts);
        }
    }

    double precision_sum = 0.0;
    double recall_sum = 0.0;
    size_t orders = 0;
    for (size_t n = 0; n < kChrfOrder; ++n) {
        if (ref_total[n] == 0) continue;  // order absent from every reference
        ++orders;
        if (hyp_total[n] > 0) {
            precision_sum += static_cast<double>(matched[n]) / static_cast<double>(hyp_total[n]);
        }
        recall_sum += static_cast<double>(matched[n]) / static_cast<double>(ref_total[n]);
    }
    if (orders == 0) return 0.0;
    const double p = precision_sum / static_cast<double>(orders);
    const double r = recall_sum / static_cast<double>(orders);
    if (p + r == 0.0) return 0.0;
    const double beta_sq = kChrfBeta * kChrfBeta;
    return 100.0 * (1.0 + beta_sq) * p * r / (beta_sq * p + r);
}

MetricScore bootstrap_stderr(const std::vector<SentencePair>& pairs, Metric metric,
                             size_t n_resamples, uint64_t seed, size_t workers) {
    if (n_resamples < 2) throw validation_error("bootstrap requires n_resamples >= 2");
    validate_pairs(pairs);
    const auto score = metric == Metric::bleu ? bleu : chrf;

    MetricScore result;
    result.metric = metric;
    result.value = score(pairs);
    result.n_resamples = n_resamples;
    result.seed = seed;
    if (pairs.size() < 2) {
        result.std_err = 0.0;
        result.low_sample_warning = true;
        return result;
    }

    std::vector<uint64_t> stream_seeds(n_resamples);
    SplitMix64 master(seed);
    for (uint64_t& s : stream_seeds) s = master.next();

    const size_t n = pairs.size();
    std::vector<double> scores(n_resamples);
    parallel_for(n_resamples, workers, [&](size_t r) {
        SplitMix64 gen(stream_seeds[r]);
        std::vector<SentencePair> resample;
        resample.reserve(n);
        for (size_t i = 0; i < n; ++i) resample.push_back(pairs[gen.next() % n]);
        scores[r] = score(resample);
    });

    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(n_resamples);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(n_resamples);  // population variance over resamples
    result.std_err = std::sqrt(var);
    return result;
}

double ppl_from_nll(double mean_nll_nats) {
    if (!std::isfinite(mean_nll_nats)) {
        throw validation_error("mean NLL must be finite");
    }
    return std::exp(mean_nll_nats);
}

double normalize_ppl(double ppl_token, double k) {
    if (!std::isfinite(ppl_token) || ppl_token < 1.0) {
        throw validation_error("token-level perplexity must be >= 1");
    }
    if (!std::isfinite(k) || k < 1.0) throw validation_error("k must be >= 1");
    return std::pow(ppl_token, k);
}

PerplexityRecord make_ppl_record(double mean_nll_nats, double k) {
    PerplexityRecord record;
    record.mean_nll = mean_nll_nats;
    record.ppl_token = ppl_from_nll(mean_nll_nats);
    record.k = k;
    record.ppl_info = normalize_ppl(record.ppl_token, k);
    return record;
}

namespace {

std::string render_cell(const CellScore& cell, bool show_stderr) {
    std::string text = format2(cell.bleu.value);
    if (show_stderr) text += " ± " + format2(cell.bleu.std_err);
    text += " / " + format2(cell.chrf.value);
    if (show_stderr) text += " ± " + format2(cell.chrf.std_err);
    return text;
}

size_t display_width(const std::string& text) { return uni::codepoint_count(text); }

}  // namespace

std::string render_report(const std::vector<ReportRow>& rows,
                          const std::vector<std::string>& models, ReportFormat format,
                          bool show_stderr) {
    if (rows.empty()) throw validation_error("report requires at least one direction");
    if (models.empty()) throw validation_error("report requires at least one model");
    for (const ReportRow& row : rows) {
        if (row.direction.empty()) throw validation_error("direction label must be non-empty");
        if (row.cells.size() != models.size()) {
            throw validation_error("row '" + row.direction + "' has " +
                                   std::to_string(row.cells.size()) + " cells, expected " +
                                   std::to_string(models.size()));
        }
    }

    // cell text matrix with per-direction best marking
    std::vector<std::vector<std::string>> grid(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
        const ReportRow& row = rows[r];
        double best_bleu = -1.0;
        double best_chrf = -1.0;
        for (const auto& cell : row.cells) {
            if (!cell) continue;
            best_bleu = std::max(best_bleu, cell->bleu.value);
            best_chrf = std::max(best_chrf, cell->chrf.value);
        }
        grid[r].resize(models.size());
        for (size_t c = 0; c < models.size(); ++c) {
            const auto& cell = row.cells[c];
            if (!cell) {
                grid[r][c] = "—";
                continue;
            }
            std::string text = render_cell(*cell, show_stderr);
            if (cell->bleu.value == best_bleu || cell->chrf.value == best_chrf) {
                text = "*" + text + "*";
            }
            grid[r][c] = std::move(text);
        }
    }

    std::string out;
    if (format == ReportFormat::tsv) {
        out += "direction";
        for (const std::string& model : models) out += "\t" + model;
        out += "\n";
        for (size_t r = 0; r < rows.size(); ++r) {
            out += rows[r].direction;
            for (const std::string& cell : grid[r]) out += "\t" + cell;
            out += "\n";
        }
        return out;
    }

    std::vector<size_t> widths(models.size() + 1, 0);
    widths[0] = display_width("direction");
    for (const ReportRow& row : rows) widths[0] = std::max(widths[0], display_width(row.direction));
    for (size_t c = 0; c < models.size(); ++c) {
        widths[c + 1] = display_width(models[c]);
        for (size_t r = 0; r < rows.size(); ++r) {
            widths[c + 1] = std::max(widths[c + 1], display_width(grid[r][c]));
        }
    }

    auto pad = [&](const std::string& text, size_t width) {
        std::string padded = text;
        padded.append(width - display_width(text), ' ');
        return padded;
    };

    out += pad("direction", widths[0]);
    for (size_t c = 0; c < models.size(); ++c) out += "  " + pad(models[c], widths[c + 1]);
    out += "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        out += pad(rows[r].direction, widths[0]);
        for (size_t c = 0; c < models.size(); ++c) out += "  " + pad(grid[r][c], widths[c + 1]);
        out += "\n";
    }
    return out;
}

std::vector<SentencePair> read_pairs_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open pairs file: " + path);
    std::vector<SentencePair> pairs;
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
            SentencePair pair;
            pair.hypothesis = doc.at("hypothesis").get<std::string>();
            pair.reference = doc.at("reference").get<std::string>();
            if (doc.contains("direction")) pair.direction = doc["direction"].get<std::string>();
            if (pair.reference.empty()) {
                throw validation_error("reference must be non-empty");
            }
            pairs.push_back(std::move(pair));
        } catch (const json::exception& e) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const validation_error& e) {
            throw validation_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return pairs;
}

std::vector<SentencePair> read_aligned_text(const std::string& hyp_path,
                                            const std::string& ref_path,
                                            const std::string& direction) {
    std::ifstream hyp_in(hyp_path);
    if (!hyp_in) throw io_error("cannot open hypothesis file: " + hyp_path);
    std::ifstream ref_in(ref_path);
    if (!ref_in) throw io_error("cannot open reference file: " + ref_path);

    std::vector<SentencePair> pairs;
    std::string hyp_line;
    std::string ref_line;
    size_t line_no = 0;
    while (true) {
        const bool have_hyp = static_cast<bool>(std::getline(hyp_in, hyp_line));
        const bool have_ref = static_cast<bool>(std::getline(ref_in, ref_line));
        if (!have_hyp && !have_ref) break;
        ++line_no;
        if (have_hyp != have_ref) {
            throw validation_error("line counts differ between " + hyp_path + " and " + ref_path);
        }
        if (ref_line.empty()) {
            throw validation_error(ref_path + ":" + std::to_string(line_no) +
                                   ": empty reference line");
        }
        pairs.push_back({hyp_line, ref_line, direction});
    }
    return pairs;
}

}  // namespace adaptkit::metrics
