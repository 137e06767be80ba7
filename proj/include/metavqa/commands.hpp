#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "metavqa/datamodel.hpp"
#include "metavqa/decoding.hpp"
#include "metavqa/metrics.hpp"
#include "metavqa/model.hpp"
#include "metavqa/sequence.hpp"
#include "metavqa/tokenizer.hpp"
#include "metavqa/training.hpp"

// Command implementations behind the metavqa executable. Each takes its
// options struct plus an output stream (tables, stats) and a log stream
// (effective options, progress), writes its files and a manifest.json into
// the output directory, and returns a summary for callers such as tests.
namespace mvqa::cli {

// Relative paths are placed under $METAVQA_OUT when it is set.
std::filesystem::path resolve_out(const std::filesystem::path& p);

struct GenDataOptions {
  SyntheticConfig synthetic;
  std::vector<double> split{80, 10, 10};  // train, val, test proportions
  std::string out = "data";
};

struct TrainOptions {
  std::string train;
  std::string val;
  std::string modalities = "all";
  ModelConfig model;
  TrainConfig train_cfg;
  int min_freq = 1;
  std::string vocab;          // existing vocab.json; built from train+val when empty
  std::string dump_sequence;  // qid: print its assembled slots and stop
  std::string out = "run";
};

struct GenerateOptions {
  std::string model_dir;  // holds model.ckpt and vocab.json
  std::string checkpoint;
  std::string vocab;
  std::string corpus;
  DecodeConfig decode;
  int threads = 1;
  std::string out = "generations";
};

struct EvaluateOptions {
  std::string generations;
  std::string corpus;
  std::string label;
  std::string out = "eval";
};

struct BenchOptions {
  std::string model_dir;
  std::string checkpoint;
  std::string vocab;
  std::string corpus;
  std::vector<std::string> methods{"greedy", "beam", "nucleus"};
  DecodeConfig decode;
  int threads = 1;
  std::string out = "bench";
};

// Table 3 row labels in their published order.
const std::vector<std::string>& ablation_rows();

struct AblateOptions {
  std::string train;
  std::string val;
  std::vector<std::string> rows = ablation_rows();
  std::vector<std::uint64_t> seeds{1};
  ModelConfig model;
  TrainConfig train_cfg;
  DecodeConfig decode;
  int min_freq = 1;
  int jobs = 1;     // rows trained concurrently
  int threads = 1;  // decoding threads per row
  std::string cache_dir;  // default <out>/cache
  std::string out = "ablation";
};

void to_json(nlohmann::json& j, const GenDataOptions& o);
void from_json(const nlohmann::json& j, GenDataOptions& o);
void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);
void to_json(nlohmann::json& j, const GenerateOptions& o);
void from_json(const nlohmann::json& j, GenerateOptions& o);
void to_json(nlohmann::json& j, const EvaluateOptions& o);
void from_json(const nlohmann::json& j, EvaluateOptions& o);
void to_json(nlohmann::json& j, const BenchOptions& o);
void from_json(const nlohmann::json& j, BenchOptions& o);
void to_json(nlohmann::json& j, const AblateOptions& o);
void from_json(const nlohmann::json& j, AblateOptions& o);

struct Generation {
  std::string qid;
  std::vector<int> ids;
  std::vector<std::string> tokens;
  double duration_ms = 0.0;
};

// Decodes every example of the corpus, fanned out over threads; results come
// back in corpus order. Each example decodes with
// seed = derive_seed(cfg.seed, fnv1a(qid)).
std::vector<Generation> generate_all(const AnyModel& model, const Vocabulary& vocab, const Corpus& corpus,
                                     const ModalityMask& mask, const DecodeConfig& cfg, int threads);

// Gold answers are normalize(answer).
MetricsReport evaluate_generations(const std::vector<Generation>& gens, const Corpus& gold);

std::string generations_jsonl(const std::vector<Generation>& gens, const DecodeConfig& cfg);
std::vector<Generation> read_generations(const std::filesystem::path& path);

struct GenDataResult {
  std::vector<std::filesystem::path> files;  // train, val, test
  CorpusStats stats;
};
struct TrainResult {
  std::filesystem::path checkpoint;
  TrainLog log;
};
struct GenerateResult {
  std::filesystem::path generations;
  std::vector<Generation> items;
};
struct BenchRow {
  std::string method;
  MetricsReport report;
  double seconds = 0.0;
};
struct BenchResult {
  std::vector<BenchRow> rows;
  std::string table;
};
struct AblationCell {
  std::string label;
  std::uint64_t seed = 0;
  std::string cache_key;
  MetricsReport report;
  double best_val_loss = 0.0;
  std::string error;  // set when the row failed
};
struct AblationResult {
  std::vector<AblationCell> cells;  // seed-major, rows in order
  std::vector<MetricsReport> mean;
  std::string table;
};

GenDataResult cmd_gen_data(const GenDataOptions& o, std::ostream& out, std::ostream& log);
TrainResult cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& log);
GenerateResult cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& log);
MetricsReport cmd_evaluate(const EvaluateOptions& o, std::ostream& out, std::ostream& log);
BenchResult cmd_bench_decoding(const BenchOptions& o, std::ostream& out, std::ostream& log);
AblationResult cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& log);

std::string format_bench_table(const std::vector<BenchRow>& rows);

}  // namespace mvqa::cli
