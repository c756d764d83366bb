#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "adaptkit/adapter.hpp"
#include "adaptkit/corpus.hpp"
#include "adaptkit/metrics.hpp"
#include "adaptkit/prng.hpp"
#include "adaptkit/sft.hpp"
#include "adaptkit/tokenizer.hpp"

using adaptkit::Tokenizer;
using adaptkit::Xoshiro256;
namespace adapter = adaptkit::adapter;
namespace corpus = adaptkit::corpus;
namespace metrics = adaptkit::metrics;
namespace sft = adaptkit::sft;

namespace {

std::string sentence(Xoshiro256& gen, size_t words) {
    static const char* kWords[] = {"sa",   "limba", "sarda",  "est",   "una",   "antiga",
                                   "de",   "cantu", "in",     "mare",  "isula", "faeddada",
                                   "\xc3\xa0", "\xc3\xa8", "tzitade", "."};
    std::string out;
    for (size_t i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += kWords[gen.next_below(16)];
    }
    return out;
}

std::vector<metrics::SentencePair> eval_set(size_t pairs) {
    Xoshiro256 gen(7);
    std::vector<metrics::SentencePair> out;
    for (size_t i = 0; i < pairs; ++i) {
        out.push_back({sentence(gen, 20), sentence(gen, 20), ""});
    }
    return out;
}

void bm_bleu(benchmark::State& state) {
    const auto pairs = eval_set(static_cast<size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(metrics::bleu(pairs));
}
BENCHMARK(bm_bleu)->Arg(100)->Arg(1000);

void bm_chrf(benchmark::State& state) {
    const auto pairs = eval_set(static_cast<size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(metrics::chrf(pairs));
}
BENCHMARK(bm_chrf)->Arg(100)->Arg(1000);

void bm_bootstrap(benchmark::State& state) {
    const auto pairs = eval_set(100);
    const auto workers = static_cast<size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            metrics::bootstrap_stderr(pairs, metrics::Metric::bleu, 200, 42, workers));
    }
}
BENCHMARK(bm_bootstrap)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void bm_tokenize_chunk(benchmark::State& state) {
    Xoshiro256 gen(11);
    const std::string text = sentence(gen, static_cast<size_t>(state.range(0)));
    const Tokenizer tok = Tokenizer::byte_level();
    for (auto _ : state) {
        const auto ids = tok.encode(text);
        benchmark::DoNotOptimize(corpus::chunk_document("d", ids, 4096, 128));
    }
    state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(text.size()));
}
BENCHMARK(bm_tokenize_chunk)->Arg(1000)->Arg(10000);

void bm_normalize(benchmark::State& state) {
    Xoshiro256 gen(13);
    const std::string text = "  " + sentence(gen, 200) + "\t\t" + sentence(gen, 200) + "  ";
    for (auto _ : state) benchmark::DoNotOptimize(corpus::normalize_text(text));
}
BENCHMARK(bm_normalize);

void bm_serialize_chatml(benchmark::State& state) {
    Xoshiro256 gen(17);
    sft::InstructionPair pair;
    pair.id = "p";
    pair.turns.push_back({sft::Role::system, sentence(gen, 10)});
    for (int round = 0; round < 3; ++round) {
        pair.turns.push_back({sft::Role::user, sentence(gen, 30)});
        pair.turns.push_back({sft::Role::assistant, sentence(gen, 30)});
    }
    const Tokenizer tok = Tokenizer::byte_level();
    for (auto _ : state) benchmark::DoNotOptimize(sft::serialize_chatml(pair, tok));
}
BENCHMARK(bm_serialize_chatml);

void bm_adapter_grads(benchmark::State& state) {
    const auto dim = static_cast<size_t>(state.range(0));
    Eigen::MatrixXd W0 = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(dim),
                                                 static_cast<Eigen::Index>(dim));
    auto layer = adapter::init_layer(adapter::Method::dora, std::move(W0), 16, 1.0, 42);
    layer.B.setRandom();
    const Eigen::VectorXd x = Eigen::VectorXd::Random(static_cast<Eigen::Index>(dim));
    const Eigen::VectorXd upstream = Eigen::VectorXd::Random(static_cast<Eigen::Index>(dim));
    for (auto _ : state) benchmark::DoNotOptimize(adapter::adapter_grads(layer, x, upstream));
}
BENCHMARK(bm_adapter_grads)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
