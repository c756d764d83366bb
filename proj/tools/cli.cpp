#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "adaptkit/adapter.hpp"
#include "adaptkit/corpus.hpp"
#include "adaptkit/errors.hpp"
#include "adaptkit/kvconfig.hpp"
#include "adaptkit/metrics.hpp"
#include "adaptkit/parallel.hpp"
#include "adaptkit/sft.hpp"
#include "adaptkit/tokenizer.hpp"

namespace adaptkit::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kOutputRootEnv = "ADAPTKIT_OUTPUT_ROOT";

const std::vector<std::string> kPresetNames = {
    "cpt-table3",      "sft-full",        "sft-lora-r64",
    "sft-rslora-r128", "sft-rslora-r256", "sft-dora-r256",
};

kv::KvMap command_defaults(const std::string& command) {
    kv::KvMap map;
    map["seed"] = "42";
    map["workers"] = "1";
    if (command == "prep-corpus") {
        map["window"] = "4096";
        map["overlap"] = "128";
        map["dedup"] = "true";
        map["drop_sources"] = "dictionary";
    } else if (command == "assemble-sft") {
        map["dedup"] = "true";
        map["upsample.capybara"] = "1";
        map["upsample.translation"] = "1";
        map["upsample.synthesized"] = "5";
        map["upsample.song"] = "1";
        map["prompt.italian"] = "300";
        map["prompt.english"] = "250";
        map["prompt.spanish"] = "150";
        map["prompt.portuguese"] = "100";
        map["prompt.french"] = "75";
        map["prompt.sardinian_share"] = "0.95";
        map["marker.start"] = "<|im_start|>";
        map["marker.end"] = "<|im_end|>";
        map["prompt_text.sardinian"] = "Arrespunde semper in sardu.";
        map["prompt_text.italian"] = "Rispondi sempre in sardo.";
        map["prompt_text.english"] = "Always respond in Sardinian.";
        map["prompt_text.spanish"] = "Responde siempre en sardo.";
        map["prompt_text.portuguese"] = "Responda sempre em sardo.";
        map["prompt_text.french"] = "Réponds toujours en sarde.";
    } else if (command == "eval-translate") {
        map["n_resamples"] = "1000";
        map["model_label"] = "model";
        map["direction"] = "all";
    } else if (command == "adapter-demo") {
        map["steps"] = "200";
        map["toy_lr"] = "0.05";
        map["dropout"] = "0";
    } else if (command == "report") {
        map["format"] = "text";
        map["stderr"] = "false";
    }
    return map;
}

kv::KvMap preset_overlay(const std::string& command, const std::string& preset) {
    if (std::find(kPresetNames.begin(), kPresetNames.end(), preset) == kPresetNames.end()) {
        throw validation_error("unknown preset '" + preset + "'");
    }
    kv::KvMap map;
    if (command == "adapter-demo" && preset != "cpt-table3") {
        const auto cfg = adapter::adapter_preset(preset);
        map["method"] = std::string(adapter::method_label(cfg->method));
        map["rank"] = std::to_string(cfg->r);
        map["alpha"] = std::to_string(cfg->alpha);
        map["dropout"] = std::to_string(cfg->dropout);
    }
    if (command == "prep-corpus" && preset == "cpt-table3") {
        map["window"] = "4096";
        map["overlap"] = "128";
    }
    return map;
}

std::string require_key(const kv::KvMap& map, const std::string& key,
                        const std::string& command) {
    auto value = kv::get(map, key);
    if (!value || value->empty()) {
        throw validation_error(command + " requires '" + key + "' (flag or config)");
    }
    return *value;
}

fs::path resolve_outdir(const kv::KvMap& resolved, const std::string& command) {
    std::string out = kv::get_string(resolved, "out", "");
    if (out.empty()) {
        if (const char* root = std::getenv(kOutputRootEnv)) {
            out = (fs::path(root) / command).string();
        } else {
            out = (fs::path("out") / command).string();
        }
    }
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw io_error("cannot create output directory: " + out);
    return out;
}

// The worker count and the output location never change output bytes (that
// is the determinism contract), so neither is part of the reproducibility
// surface the record captures.
void write_run_record(const fs::path& outdir, const std::string& command,
                      const kv::KvMap& resolved) {
    json doc(json::value_t::object);
    doc["command"] = command;
    for (const auto& [key, value] : resolved) {
        if (key == "workers" || key == "out") continue;
        doc[key] = value;
    }
    std::ofstream out(outdir / "run_record.json", std::ios::trunc);
    if (!out) throw io_error("cannot write run record in " + outdir.string());
    out << doc.dump(2) << "\n";
    if (!out) throw io_error("write failed: run_record.json");
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open output file: " + path.string());
    out << content;
    if (!out) throw io_error("write failed: " + path.string());
}

// ---------------------------------------------------------------- commands

void cmd_prep_corpus(const kv::KvMap& resolved) {
    const std::string input = require_key(resolved, "input", "prep-corpus");
    const fs::path outdir = resolve_outdir(resolved, "prep-corpus");
    const auto window = static_cast<size_t>(kv::get_u64(resolved, "window", 4096));
    const auto overlap = static_cast<size_t>(kv::get_u64(resolved, "overlap", 128));
    const auto workers = static_cast<unsigned>(kv::get_u64(resolved, "workers", 1));
    const uint64_t seed = kv::get_u64(resolved, "seed", 42);
    const uint64_t replay_seed = kv::get_u64(resolved, "replay_seed", seed);
    const bool dedup = kv::get_bool(resolved, "dedup", true);

    std::vector<corpus::Source> drop_sources;
    {
        std::istringstream list(kv::get_string(resolved, "drop_sources", ""));
        std::string label;
        while (std::getline(list, label, ',')) {
            if (label.empty()) continue;
            auto source = corpus::parse_source(label);
            if (!source) throw validation_error("unknown source in drop_sources: " + label);
            drop_sources.push_back(*source);
        }
    }

    std::vector<corpus::Document> docs = corpus::read_documents_jsonl(input);
    std::vector<corpus::DropRecord> drop_log;

    auto flagged = corpus::drop_flagged_sources(std::move(docs), drop_sources);
    drop_log.insert(drop_log.end(), flagged.dropped.begin(), flagged.dropped.end());

    auto normalized = corpus::normalize_documents(std::move(flagged.kept), workers);
    drop_log.insert(drop_log.end(), normalized.dropped.begin(), normalized.dropped.end());

    corpus::NullClassifier classifier;
    auto filtered = corpus::filter_documents(normalized.kept, classifier);
    drop_log.insert(drop_log.end(), filtered.dropped.begin(), filtered.dropped.end());

    std::vector<corpus::Document> kept = std::move(filtered.kept);
    if (dedup) {
        auto deduped = corpus::dedup_documents(std::move(kept));
        drop_log.insert(drop_log.end(), deduped.dropped.begin(), deduped.dropped.end());
        kept = std::move(deduped.kept);
    }

    std::vector<corpus::Document> sardinian;
    std::vector<corpus::Document> replay;
    for (corpus::Document& doc : kept) {
        (corpus::is_replay(doc.source) ? replay : sardinian).push_back(std::move(doc));
    }
    const std::vector<corpus::Document> ordered =
        corpus::interleave_replay(sardinian, replay, replay_seed);

    const Tokenizer tokenizer = Tokenizer::byte_level();
    std::vector<std::vector<corpus::TokenChunk>> per_doc(ordered.size());
    parallel_for(ordered.size(), workers, [&](size_t i) {
        per_doc[i] = corpus::chunk_document(ordered[i].id, tokenizer.encode(ordered[i].text),
                                            window, overlap);
    });
    std::vector<corpus::TokenChunk> chunks;
    for (auto& doc_chunks : per_doc) {
        chunks.insert(chunks.end(), std::make_move_iterator(doc_chunks.begin()),
                      std::make_move_iterator(doc_chunks.end()));
    }

    corpus::CorpusManifest manifest = corpus::corpus_stats(ordered, chunks, tokenizer);

    corpus::write_chunks_jsonl((outdir / "chunks.jsonl").string(), chunks);
    corpus::write_drop_log_jsonl((outdir / "drop_log.jsonl").string(), drop_log);
    write_text_file(outdir / "corpus_manifest.json", manifest.to_json_string());
    write_run_record(outdir, "prep-corpus", resolved);
}

void cmd_assemble_sft(const kv::KvMap& resolved) {
    const std::string input = require_key(resolved, "input", "assemble-sft");
    const fs::path outdir = resolve_outdir(resolved, "assemble-sft");
    const auto workers = static_cast<size_t>(kv::get_u64(resolved, "workers", 1));
    const uint64_t seed = kv::get_u64(resolved, "seed", 42);
    const bool dedup = kv::get_bool(resolved, "dedup", true);
    const double share = kv::get_double(resolved, "prompt.sardinian_share", 0.95);

    sft::ChatMarkers markers;
    markers.turn_start = kv::get_string(resolved, "marker.start", markers.turn_start);
    markers.turn_end = kv::get_string(resolved, "marker.end", markers.turn_end);

    std::vector<sft::InstructionPair> pairs = sft::read_pairs_jsonl(input);
    const Tokenizer tokenizer = Tokenizer::byte_level();

    sft::PoolManifest manifest;
    manifest.raw = sft::pool_stats(pairs, tokenizer);

    std::vector<corpus::DropRecord> drop_log;
    if (dedup) {
        auto result = sft::dedup_pairs(std::move(pairs));
        pairs = std::move(result.kept);
        drop_log = std::move(result.dropped);
    }
    manifest.deduped_count = pairs.size();

    for (sft::Bucket bucket : {sft::Bucket::capybara, sft::Bucket::translation,
                               sft::Bucket::synthesized, sft::Bucket::song}) {
        const std::string key = "upsample." + std::string(sft::bucket_label(bucket));
        const auto factor = static_cast<size_t>(kv::get_u64(resolved, key, 1));
        pairs = sft::upsample_bucket(std::move(pairs), bucket, factor);
    }
    manifest.upsampled_additions = pairs.size() - manifest.deduped_count;

    std::map<sft::PromptLang, size_t> targets;
    for (sft::PromptLang lang : {sft::PromptLang::italian, sft::PromptLang::english,
                                 sft::PromptLang::spanish, sft::PromptLang::portuguese,
                                 sft::PromptLang::french}) {
        const std::string key = "prompt." + std::string(sft::prompt_lang_label(lang));
        targets[lang] = static_cast<size_t>(kv::get_u64(resolved, key, 0));
    }
    pairs = sft::assign_system_prompts(std::move(pairs), targets, seed, share);

    std::map<sft::PromptLang, std::string> prompt_texts;
    for (sft::PromptLang lang : {sft::PromptLang::sardinian, sft::PromptLang::italian,
                                 sft::PromptLang::english, sft::PromptLang::spanish,
                                 sft::PromptLang::portuguese, sft::PromptLang::french}) {
        const std::string key = "prompt_text." + std::string(sft::prompt_lang_label(lang));
        const std::string text = kv::get_string(resolved, key, "");
        if (!text.empty()) prompt_texts[lang] = text;
    }
    pairs = sft::apply_system_prompts(std::move(pairs), prompt_texts);

    std::vector<sft::SerializedExample> serialized(pairs.size());
    parallel_for(pairs.size(), workers, [&](size_t i) {
        serialized[i] = sft::serialize_chatml(pairs[i], tokenizer, markers);
    });

    manifest.final = sft::pool_stats(pairs, tokenizer);
    manifest.check();

    sft::write_serialized_jsonl((outdir / "examples.jsonl").string(), serialized);
    corpus::write_drop_log_jsonl((outdir / "drop_log.jsonl").string(), drop_log);
    write_text_file(outdir / "pool_manifest.json", manifest.to_json_string());
    write_run_record(outdir, "assemble-sft", resolved);
}

void cmd_eval_translate(const kv::KvMap& resolved) {
    const fs::path outdir = resolve_outdir(resolved, "eval-translate");
    const auto workers = static_cast<size_t>(kv::get_u64(resolved, "workers", 1));
    const uint64_t seed = kv::get_u64(resolved, "seed", 42);
    const auto n_resamples = static_cast<size_t>(kv::get_u64(resolved, "n_resamples", 1000));
    const std::string model_label = kv::get_string(resolved, "model_label", "model");

    std::vector<metrics::SentencePair> pairs;
    const std::string pairs_path = kv::get_string(resolved, "pairs", "");
    if (!pairs_path.empty()) {
        pairs = metrics::read_pairs_jsonl(pairs_path);
    } else {
        const std::string hyp = require_key(resolved, "hyp", "eval-translate");
        const std::string ref = require_key(resolved, "ref", "eval-translate");
        pairs = metrics::read_aligned_text(hyp, ref,
                                           kv::get_string(resolved, "direction", "all"));
    }
    for (metrics::SentencePair& pair : pairs) {
        if (pair.direction.empty()) pair.direction = "all";
    }

    // group by direction, first appearance fixes the row order
    std::vector<std::pair<std::string, std::vector<metrics::SentencePair>>> groups;
    for (metrics::SentencePair& pair : pairs) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == pair.direction; });
        if (it == groups.end()) {
            groups.push_back({pair.direction, {}});
            it = std::prev(groups.end());
        }
        it->second.push_back(std::move(pair));
    }

    std::string report_jsonl;
    std::vector<metrics::ReportRow> rows;
    for (const auto& [direction, group] : groups) {
        metrics::CellScore cell;
        cell.bleu = metrics::bootstrap_stderr(group, metrics::Metric::bleu, n_resamples, seed,
                                              workers);
        cell.chrf = metrics::bootstrap_stderr(group, metrics::Metric::chrf, n_resamples, seed,
                                              workers);
        for (const metrics::MetricScore& score : {cell.bleu, cell.chrf}) {
            json line{{"direction", direction},
                      {"model", model_label},
                      {"metric", std::string(metrics::metric_label(score.metric))},
                      {"value", score.value},
                      {"stderr", score.std_err},
                      {"n_resamples", score.n_resamples},
                      {"seed", score.seed},
                      {"low_sample_warning", score.low_sample_warning}};
            report_jsonl += line.dump() + "\n";
        }
        rows.push_back({direction, {cell}});
    }

    write_text_file(outdir / "report.jsonl", report_jsonl);
    write_text_file(outdir / "report.txt",
                    metrics::render_report(rows, {model_label}, metrics::ReportFormat::text,
                                           /*show_stderr=*/true));
    write_run_record(outdir, "eval-translate", resolved);
}

void cmd_ppl_normalize(const kv::KvMap& resolved) {
    const std::string input = require_key(resolved, "input", "ppl-normalize");
    const fs::path outdir = resolve_outdir(resolved, "ppl-normalize");

    std::ifstream in(input);
    if (!in) throw io_error("cannot open input file: " + input);

    std::string out_jsonl;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw validation_error(input + ":" + std::to_string(line_no) +
                                   ": invalid JSON object");
        }
        try {
            double mean_nll = 0.0;
            if (doc.contains("ppl_token")) {
                const double ppl = doc["ppl_token"].get<double>();
                if (!(ppl >= 1.0)) {
                    throw validation_error("token-level perplexity must be >= 1");
                }
                mean_nll = std::log(ppl);
            } else {
                const auto token_count = doc.at("token_count").get<uint64_t>();
                if (token_count == 0) throw validation_error("token_count must be >= 1");
                mean_nll = doc.at("total_nll_nats").get<double>() /
                           static_cast<double>(token_count);
            }
            double k = 1.0;
            if (doc.contains("k")) {
                k = doc["k"].get<double>();
            } else if (doc.contains("text")) {
                k = byte_stats(doc["text"].get<std::string>()).bytes_per_codepoint;
            }
            const metrics::PerplexityRecord record = metrics::make_ppl_record(mean_nll, k);
            json out_line(json::value_t::object);
            if (doc.contains("id")) out_line["id"] = doc["id"];
            out_line["mean_nll"] = record.mean_nll;
            out_line["ppl_token"] = record.ppl_token;
            out_line["k"] = record.k;
            out_line["ppl_info"] = record.ppl_info;
            out_jsonl += out_line.dump() + "\n";
        } catch (const json::exception& e) {
            throw validation_error(input + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const validation_error& e) {
            throw validation_error(input + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }

    write_text_file(outdir / "ppl.jsonl", out_jsonl);
    write_run_record(outdir, "ppl-normalize", resolved);
}

json telemetry_cell(adapter::Method method, size_t rank, double alpha,
                    const adapter::TrainTelemetry& telemetry) {
    json cell{{"method", std::string(adapter::method_label(method))},
              {"rank", rank},
              {"alpha", alpha},
              {"steps", telemetry.losses.size()},
              {"diverged", telemetry.diverged},
              {"final_eval_loss", telemetry.final_eval_loss}};
    if (!telemetry.losses.empty()) {
        cell["first_loss"] = telemetry.losses.front();
        cell["final_loss"] = telemetry.losses.back();
        cell["first_grad_norm"] = telemetry.grad_norms.front();
    }
    return cell;
}

void cmd_adapter_demo(const kv::KvMap& resolved) {
    const fs::path outdir = resolve_outdir(resolved, "adapter-demo");
    const uint64_t seed = kv::get_u64(resolved, "seed", 42);
    const auto steps = static_cast<size_t>(kv::get_u64(resolved, "steps", 200));
    adapter::ToyTrainOptions opts;
    opts.learning_rate = kv::get_double(resolved, "toy_lr", opts.learning_rate);
    opts.dropout = kv::get_double(resolved, "dropout", 0.0);

    json summary(json::value_t::object);
    summary["cells"] = json::array();

    const std::string method_label = kv::get_string(resolved, "method", "");
    if (!method_label.empty()) {
        const auto method = adapter::parse_method(method_label);
        if (!method) throw validation_error("unknown method '" + method_label + "'");
        const auto rank = static_cast<size_t>(kv::get_u64(resolved, "rank", 0));
        const double alpha = kv::get_double(resolved, "alpha", 0.0);
        const auto telemetry = adapter::toy_train(*method, rank, alpha, steps, seed, opts);
        const std::string name =
            *method == adapter::Method::full
                ? "telemetry_full.jsonl"
                : "telemetry_" + method_label + "_r" + std::to_string(rank) + ".jsonl";
        adapter::write_telemetry_jsonl((outdir / name).string(), telemetry);
        summary["cells"].push_back(telemetry_cell(*method, rank, alpha, telemetry));
    } else {
        // collapse demonstration: both scalings over the rank grid at
        // alpha = r, identical everything else
        summary["collapse"] = json::array();
        for (size_t rank : {size_t{4}, size_t{64}}) {
            const double alpha = static_cast<double>(rank);
            std::map<adapter::Method, adapter::TrainTelemetry> cells;
            for (adapter::Method method : {adapter::Method::lora, adapter::Method::rslora}) {
                const auto telemetry = adapter::toy_train(method, rank, alpha, steps, seed, opts);
                const std::string name = "telemetry_" +
                                         std::string(adapter::method_label(method)) + "_r" +
                                         std::to_string(rank) + ".jsonl";
                adapter::write_telemetry_jsonl((outdir / name).string(), telemetry);
                summary["cells"].push_back(telemetry_cell(method, rank, alpha, telemetry));
                cells[method] = telemetry;
            }
            const double ratio = cells[adapter::Method::lora].grad_norms.front() /
                                 cells[adapter::Method::rslora].grad_norms.front();
            const double expected = 1.0 / std::sqrt(static_cast<double>(rank));
            const double rel_err = std::abs(ratio - expected) / expected;
            summary["collapse"].push_back(json{{"rank", rank},
                                               {"ratio", ratio},
                                               {"expected", expected},
                                               {"rel_err", rel_err},
                                               {"ok", rel_err < 1e-9}});
        }
    }

    write_text_file(outdir / "summary.json", summary.dump(2) + "\n");
    write_run_record(outdir, "adapter-demo", resolved);
}

void cmd_report(const kv::KvMap& resolved) {
    const std::string input = require_key(resolved, "input", "report");
    const fs::path outdir = resolve_outdir(resolved, "report");
    const std::string format_label = kv::get_string(resolved, "format", "text");
    const bool show_stderr = kv::get_bool(resolved, "stderr", false);
    if (format_label != "text" && format_label != "tsv") {
        throw validation_error("format must be 'text' or 'tsv'");
    }

    std::ifstream in(input);
    if (!in) throw io_error("cannot open input file: " + input);

    std::vector<std::string> directions;
    std::vector<std::string> models;
    // (direction, model) -> partial cell; a cell renders only when both
    // metrics arrived
    std::map<std::pair<std::string, std::string>,
             std::pair<std::optional<metrics::MetricScore>, std::optional<metrics::MetricScore>>>
        cells;

    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw validation_error(input + ":" + std::to_string(line_no) +
                                   ": invalid JSON object");
        }
        try {
            const std::string direction = doc.at("direction").get<std::string>();
            const std::string model =
                doc.contains("model") ? doc["model"].get<std::string>() : "model";
            const auto metric = metrics::parse_metric(doc.at("metric").get<std::string>());
            if (!metric) {
                throw validation_error("unknown metric '" +
                                       doc.at("metric").get<std::string>() + "'");
            }
            metrics::MetricScore score;
            score.metric = *metric;
            score.value = doc.at("value").get<double>();
            if (doc.contains("stderr")) score.std_err = doc["stderr"].get<double>();
            if (doc.contains("n_resamples")) {
                score.n_resamples = doc["n_resamples"].get<size_t>();
            }
            if (doc.contains("seed")) score.seed = doc["seed"].get<uint64_t>();

            if (std::find(directions.begin(), directions.end(), direction) ==
                directions.end()) {
                directions.push_back(direction);
            }
            if (std::find(models.begin(), models.end(), model) == models.end()) {
                models.push_back(model);
            }
            auto& slot = cells[{direction, model}];
            (*metric == metrics::Metric::bleu ? slot.first : slot.second) = score;
        } catch (const json::exception& e) {
            throw validation_error(input + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const validation_error& e) {
            throw validation_error(input + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }

    std::vector<metrics::ReportRow> rows;
    for (const std::string& direction : directions) {
        metrics::ReportRow row;
        row.direction = direction;
        for (const std::string& model : models) {
            auto it = cells.find({direction, model});
            if (it != cells.end() && it->second.first && it->second.second) {
                row.cells.push_back(metrics::CellScore{*it->second.first, *it->second.second});
            } else {
                row.cells.push_back(std::nullopt);
            }
        }
        rows.push_back(std::move(row));
    }

    const auto format = format_label == "tsv" ? metrics::ReportFormat::tsv
                                              : metrics::ReportFormat::text;
    const std::string table = metrics::render_report(rows, models, format, show_stderr);
    write_text_file(outdir / (format_label == "tsv" ? "report.tsv" : "report.txt"), table);
    write_run_record(outdir, "report", resolved);
    std::cout << table;
}

// ------------------------------------------------------------------ driver

struct FlagValues {
    std::string config;
    std::string preset;
    std::string out;
    std::string seed;
    std::string workers;
    std::map<std::string, std::string> extra;  // subcommand-specific keys
};

void add_common_flags(CLI::App* cmd, FlagValues& flags) {
    cmd->add_option("--config", flags.config, "flat key=value config file");
    cmd->add_option("--preset", flags.preset, "named parameter preset");
    cmd->add_option("--seed", flags.seed, "master seed (default 42)");
    cmd->add_option("--workers", flags.workers, "worker thread count");
    cmd->add_option("--out,-o", flags.out, "output directory");
}

// flags > config file > preset > built-in defaults
kv::KvMap resolve_config(const std::string& command, const FlagValues& flags) {
    kv::KvMap resolved = command_defaults(command);
    if (!flags.preset.empty()) {
        resolved = kv::merge(std::move(resolved), preset_overlay(command, flags.preset));
        resolved["preset"] = flags.preset;
    }
    if (!flags.config.empty()) {
        resolved = kv::merge(std::move(resolved), kv::parse_file(flags.config));
    }
    kv::KvMap flag_map = flags.extra;
    if (!flags.seed.empty()) flag_map["seed"] = flags.seed;
    if (!flags.workers.empty()) flag_map["workers"] = flags.workers;
    if (!flags.out.empty()) flag_map["out"] = flags.out;
    return kv::merge(std::move(resolved), flag_map);
}

}  // namespace

int run(std::vector<std::string> args) {
    CLI::App app{"two-stage language-adaptation pipeline toolkit"};
    app.require_subcommand(1);

    FlagValues flags;
    std::map<std::string, std::string> opt;  // raw subcommand option storage

    CLI::App* prep = app.add_subcommand("prep-corpus",
                                        "normalize, filter, dedup, chunk a document corpus");
    add_common_flags(prep, flags);
    prep->add_option("--input,-i", opt["input"], "documents JSONL");
    prep->add_option("--window", opt["window"], "chunk window in tokens");
    prep->add_option("--overlap", opt["overlap"], "chunk overlap in tokens");

    CLI::App* sft_cmd = app.add_subcommand("assemble-sft",
                                           "dedup, upsample, serialize an instruction pool");
    add_common_flags(sft_cmd, flags);
    sft_cmd->add_option("--input,-i", opt["input"], "instruction pairs JSONL");

    CLI::App* eval = app.add_subcommand("eval-translate",
                                        "corpus BLEU/chrF with bootstrap standard errors");
    add_common_flags(eval, flags);
    eval->add_option("--pairs", opt["pairs"], "JSONL with hypothesis/reference/direction");
    eval->add_option("--hyp", opt["hyp"], "hypothesis text file, one sentence per line");
    eval->add_option("--ref", opt["ref"], "reference text file, one sentence per line");
    eval->add_option("--direction", opt["direction"], "direction label for --hyp/--ref");
    eval->add_option("--resamples", opt["n_resamples"], "bootstrap resample count");

    CLI::App* ppl = app.add_subcommand("ppl-normalize",
                                       "byte-fallback perplexity normalization");
    add_common_flags(ppl, flags);
    ppl->add_option("--input,-i", opt["input"], "perplexity records JSONL");

    CLI::App* demo = app.add_subcommand("adapter-demo",
                                        "toy-task training telemetry and collapse check");
    add_common_flags(demo, flags);
    demo->add_option("--method", opt["method"], "full, lora, rslora or dora");
    demo->add_option("--rank", opt["rank"], "adapter rank");
    demo->add_option("--alpha", opt["alpha"], "adapter alpha");
    demo->add_option("--steps", opt["steps"], "training steps");

    CLI::App* report = app.add_subcommand("report", "render a results table from report JSONL");
    add_common_flags(report, flags);
    report->add_option("--input,-i", opt["input"], "report JSONL");
    report->add_option("--format", opt["format"], "text or tsv");
    report->add_flag_callback("--stderr", [&] { opt["stderr"] = "true"; },
                              "show ± stderr in cells");

    std::reverse(args.begin(), args.end());  // CLI11 consumes back-to-front
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    // only user-set options participate in precedence
    for (auto it = opt.begin(); it != opt.end();) {
        it = it->second.empty() ? opt.erase(it) : std::next(it);
    }
    flags.extra = opt;

    const std::map<std::string, void (*)(const kv::KvMap&)> dispatch = {
        {"prep-corpus", cmd_prep_corpus},   {"assemble-sft", cmd_assemble_sft},
        {"eval-translate", cmd_eval_translate}, {"ppl-normalize", cmd_ppl_normalize},
        {"adapter-demo", cmd_adapter_demo}, {"report", cmd_report},
    };

    try {
        for (const auto& [name, fn] : dispatch) {
            if (app.got_subcommand(name)) {
                fn(resolve_config(name, flags));
                return 0;
            }
        }
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace adaptkit::cli
