#include "metavqa/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "metavqa/checkpoint.hpp"
#include "metavqa/config_json.hpp"
#include "metavqa/error.hpp"
#include "metavqa/hash.hpp"
#include "metavqa/manifest.hpp"

namespace mvqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::read_opt;

fs::path resolve_out(const fs::path& p) {
  const char* root = std::getenv("METAVQA_OUT");
  if (p.is_relative() && root && *root) return fs::path(root) / p;
  return p;
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = {"S", "S+V", "S+B", "S+M", "S+M,V", "S+M,B", "S+M,V,B"};
  return rows;
}

// ---- option <-> json ----

void to_json(json& j, const GenDataOptions& o) {
  j = {{"synthetic", o.synthetic}, {"split", o.split}, {"out", o.out}};
}
void from_json(const json& j, GenDataOptions& o) {
  read_opt(j, "synthetic", o.synthetic);
  read_opt(j, "split", o.split);
  read_opt(j, "out", o.out);
}

void to_json(json& j, const TrainOptions& o) {
  j = {{"train", o.train},       {"val", o.val},           {"modalities", o.modalities},
       {"model", o.model},       {"training", o.train_cfg}, {"min_freq", o.min_freq},
       {"vocab", o.vocab},       {"out", o.out}};
}
void from_json(const json& j, TrainOptions& o) {
  read_opt(j, "train", o.train);
  read_opt(j, "val", o.val);
  read_opt(j, "modalities", o.modalities);
  read_opt(j, "model", o.model);
  read_opt(j, "training", o.train_cfg);
  read_opt(j, "min_freq", o.min_freq);
  read_opt(j, "vocab", o.vocab);
  read_opt(j, "out", o.out);
}

void to_json(json& j, const GenerateOptions& o) {
  j = {{"model_dir", o.model_dir}, {"checkpoint", o.checkpoint}, {"vocab", o.vocab},
       {"corpus", o.corpus},       {"decode", o.decode},         {"threads", o.threads},
       {"out", o.out}};
}
void from_json(const json& j, GenerateOptions& o) {
  read_opt(j, "model_dir", o.model_dir);
  read_opt(j, "checkpoint", o.checkpoint);
  read_opt(j, "vocab", o.vocab);
  read_opt(j, "corpus", o.corpus);
  read_opt(j, "decode", o.decode);
  read_opt(j, "threads", o.threads);
  read_opt(j, "out", o.out);
}

void to_json(json& j, const EvaluateOptions& o) {
  j = {{"generations", o.generations}, {"corpus", o.corpus}, {"label", o.label}, {"out", o.out}};
}
void from_json(const json& j, EvaluateOptions& o) {
  read_opt(j, "generations", o.generations);
  read_opt(j, "corpus", o.corpus);
  read_opt(j, "label", o.label);
  read_opt(j, "out", o.out);
}

void to_json(json& j, const BenchOptions& o) {
  j = {{"model_dir", o.model_dir}, {"checkpoint", o.checkpoint}, {"vocab", o.vocab},
       {"corpus", o.corpus},       {"methods", o.methods},       {"decode", o.decode},
       {"threads", o.threads},     {"out", o.out}};
}
void from_json(const json& j, BenchOptions& o) {
  read_opt(j, "model_dir", o.model_dir);
  read_opt(j, "checkpoint", o.checkpoint);
  read_opt(j, "vocab", o.vocab);
  read_opt(j, "corpus", o.corpus);
  read_opt(j, "methods", o.methods);
  read_opt(j, "decode", o.decode);
  read_opt(j, "threads", o.threads);
  read_opt(j, "out", o.out);
}

void to_json(json& j, const AblateOptions& o) {
  j = {{"train", o.train},     {"val", o.val},         {"rows", o.rows},       {"seeds", o.seeds},
       {"model", o.model},     {"training", o.train_cfg}, {"decode", o.decode}, {"min_freq", o.min_freq},
       {"jobs", o.jobs},       {"threads", o.threads}, {"cache_dir", o.cache_dir}, {"out", o.out}};
}
void from_json(const json& j, AblateOptions& o) {
  read_opt(j, "train", o.train);
  read_opt(j, "val", o.val);
  read_opt(j, "rows", o.rows);
  read_opt(j, "seeds", o.seeds);
  read_opt(j, "model", o.model);
  read_opt(j, "training", o.train_cfg);
  read_opt(j, "decode", o.decode);
  read_opt(j, "min_freq", o.min_freq);
  read_opt(j, "jobs", o.jobs);
  read_opt(j, "threads", o.threads);
  read_opt(j, "cache_dir", o.cache_dir);
  read_opt(j, "out", o.out);
}

namespace {

void log_options(std::ostream& log, const std::string& command, const json& options) {
  log << command << " options: " << options.dump() << '\n';
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

Corpus load_optional(const std::string& path, Split split) {
  if (path.empty()) {
    Corpus c;
    c.split = split;
    return c;
  }
  return load_corpus(path);
}

// Vocabulary over train (+ val when present).
Vocabulary build_vocab(const Corpus& train, const Corpus& val, int min_freq) {
  std::vector<Corpus> cs = {train};
  if (!val.examples.empty()) cs.push_back(val);
  return Vocabulary::build(std::span<const Corpus>(cs), min_freq);
}

struct LoadedModel {
  AnyModel model;
  Vocabulary vocab;
  ModalityMask mask;
  fs::path checkpoint_path;
  fs::path vocab_path;
};

LoadedModel load_model(const std::string& model_dir, const std::string& checkpoint, const std::string& vocab) {
  fs::path ck = checkpoint, vp = vocab;
  if (!model_dir.empty()) {
    if (ck.empty()) ck = fs::path(model_dir) / "model.ckpt";
    if (vp.empty()) vp = fs::path(model_dir) / "vocab.json";
  }
  if (ck.empty() || vp.empty()) throw UsageError("need --model-dir or both --checkpoint and --vocab");
  auto loaded = load_checkpoint(ck);
  auto v = Vocabulary::load(vp);
  const auto want = loaded.metadata.value("vocab_fingerprint", std::string());
  if (!want.empty() && want != hex64(v.fingerprint())) {
    throw DataError("vocabulary " + vp.string() + " (fingerprint " + hex64(v.fingerprint()) +
                    ") does not match checkpoint " + ck.string() + " (fingerprint " + want + ")");
  }
  if (config_of(loaded.model).vocab_size != v.size()) {
    throw DataError("checkpoint vocab_size " + std::to_string(config_of(loaded.model).vocab_size) +
                    " != vocabulary size " + std::to_string(v.size()));
  }
  const auto mask = ModalityMask::parse(loaded.metadata.value("modalities", std::string("all")));
  return {std::move(loaded.model), std::move(v), mask, ck, vp};
}

void write_jsonl_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, text);
  fs::rename(tmp, path);
}

json report_json(const MetricsReport& r) { return json::parse(r.to_json(false)); }

}  // namespace

// ---- shared pipeline ----

std::vector<Generation> generate_all(const AnyModel& model, const Vocabulary& vocab, const Corpus& corpus,
                                     const ModalityMask& mask, const DecodeConfig& cfg, int threads) {
  cfg.validate();
  const int max_len = config_of(model).max_seq_len;
  const auto contexts = assemble_corpus(corpus, vocab, mask, false, max_len);
  std::vector<Generation> out(contexts.size());
  std::vector<std::exception_ptr> errors(contexts.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < contexts.size(); i = next++) {
      try {
        DecodeConfig c = cfg;
        c.seed = derive_seed(cfg.seed, fnv1a(contexts[i].qid));
        const auto r = std::visit([&](const auto& m) { return decode(m, contexts[i], c); }, model);
        out[i] = {contexts[i].qid, r.tokens, vocab.decode_tokens(r.tokens), r.duration_ms};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(contexts.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  // Earliest failure in corpus order, so the error is independent of scheduling.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

MetricsReport evaluate_generations(const std::vector<Generation>& gens, const Corpus& gold) {
  std::map<std::string, TokenList> g, ref;
  for (const auto& x : gens) {
    if (!g.emplace(x.qid, x.tokens).second) throw DataError("duplicate generation for qid " + x.qid);
  }
  for (const auto& ex : gold.examples) ref[ex.qid] = normalize(ex.answer);
  return evaluate_corpus(g, ref);
}

std::string generations_jsonl(const std::vector<Generation>& gens, const DecodeConfig& cfg) {
  std::string s;
  const json config = cfg;
  for (const auto& g : gens) {
    json rec = {{"qid", g.qid},           {"strategy", to_string(cfg.strategy)}, {"config", config},
                {"tokens", g.tokens},     {"ids", g.ids},                        {"text", join_tokens(g.tokens)},
                {"duration_ms", g.duration_ms}};
    s += rec.dump();
    s += '\n';
  }
  return s;
}

std::vector<Generation> read_generations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open generations " + path.string());
  std::vector<Generation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      Generation g;
      g.qid = j.at("qid").get<std::string>();
      if (j.contains("tokens")) {
        g.tokens = j.at("tokens").get<std::vector<std::string>>();
      } else {
        g.tokens = normalize(j.at("text").get<std::string>());
      }
      read_opt(j, "ids", g.ids);
      read_opt(j, "duration_ms", g.duration_ms);
      out.push_back(std::move(g));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

// ---- gen-data ----

GenDataResult cmd_gen_data(const GenDataOptions& o, std::ostream& out, std::ostream& log) {
  log_options(log, "gen-data", o);
  if (o.synthetic.n_examples < 0) throw UsageError("--n must be >= 0");
  if (o.split.size() != 3) throw UsageError("--split takes three proportions: train,val,test");
  double total = 0.0;
  for (double p : o.split) {
    if (!(p >= 0.0)) throw UsageError("--split proportions must be non-negative");
    total += p;
  }
  if (total <= 0.0) throw UsageError("--split proportions sum to zero");
  if (o.synthetic.metadata_signal < 0.0 || o.synthetic.metadata_signal > 1.0) {
    throw UsageError("--metadata-signal must lie in [0, 1]");
  }

  const auto corpus = generate_synthetic(o.synthetic);
  const auto n = corpus.examples.size();
  const auto val_n = static_cast<std::size_t>(static_cast<double>(n) * o.split[1] / total);
  const auto test_n = static_cast<std::size_t>(static_cast<double>(n) * o.split[2] / total);
  const auto parts = split_corpus(corpus, {n - val_n - test_n, val_n, test_n});

  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  RunManifest manifest{"gen-data", o};
  GenDataResult res;
  const char* names[] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    const auto path = dir / (std::string(names[i]) + ".jsonl");
    save_corpus(path, parts[static_cast<std::size_t>(i)]);
    manifest.add_output(names[i], path);
    res.files.push_back(path);
  }
  res.stats = corpus_stats(corpus);
  out << format_stats(res.stats);
  for (int i = 0; i < 3; ++i) {
    out << names[i] << ": " << parts[static_cast<std::size_t>(i)].examples.size() << " examples -> "
        << res.files[static_cast<std::size_t>(i)].string() << '\n';
  }
  manifest.save(dir / "manifest.json");
  return res;
}

// ---- train ----

TrainResult cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& log) {
  require(o.train, "--train");
  const auto mask = ModalityMask::parse(o.modalities);
  const auto train_corpus = load_corpus(o.train);
  const auto val_corpus = load_optional(o.val, Split::kVal);
  if (!val_corpus.examples.empty() && !(val_corpus.feature_dims == train_corpus.feature_dims)) {
    throw DimensionError("train and val corpora disagree on feature_dims");
  }
  const auto vocab = o.vocab.empty() ? build_vocab(train_corpus, val_corpus, o.min_freq) : Vocabulary::load(o.vocab);

  ModelConfig mc = o.model;
  mc.vocab_size = vocab.size();
  mc.feature_dims = train_corpus.feature_dims;
  mc.validate();
  o.train_cfg.validate();

  TrainOptions effective = o;
  effective.model = mc;
  log_options(log, "train", effective);

  if (!o.dump_sequence.empty()) {
    for (const auto* c : {&train_corpus, &val_corpus}) {
      for (const auto& ex : c->examples) {
        if (ex.qid == o.dump_sequence) {
          out << format_sequence(assemble(ex, vocab, mask, true, mc.max_seq_len), vocab);
          return {};
        }
      }
    }
    throw DataError("qid " + o.dump_sequence + " not found in the training or validation corpus");
  }

  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  auto model = make_model(mc);
  const ProgressFn progress = [&](const std::string& s) { log << s << '\n' << std::flush; };
  TrainResult res;
  res.log = std::visit(
      [&](auto& m) { return train(m, train_corpus, val_corpus, vocab, mask, o.train_cfg, progress); }, model);

  res.checkpoint = dir / "model.ckpt";
  const json meta = {{"vocab_fingerprint", hex64(vocab.fingerprint())},
                     {"modalities", mask.label()},
                     {"training", o.train_cfg},
                     {"best_step", res.log.best_step},
                     {"best_val_loss", res.log.best_val_loss}};
  save_checkpoint(model, res.checkpoint, meta);
  res.log.checkpoint_path = res.checkpoint.string();
  vocab.save(dir / "vocab.json");
  write_text(dir / "train_log.csv", res.log.to_csv());

  RunManifest manifest{"train", effective};
  manifest.add_input("train", o.train);
  if (!o.val.empty()) manifest.add_input("val", o.val);
  if (!o.vocab.empty()) manifest.add_input("vocab", o.vocab);
  manifest.add_output("checkpoint", res.checkpoint);
  manifest.add_output("vocab", dir / "vocab.json");
  manifest.add_output("train_log", dir / "train_log.csv");
  manifest.save(dir / "manifest.json");

  out << "steps " << res.log.steps.size() << ", best step " << res.log.best_step;
  if (res.log.has_validation) out << ", best val loss " << res.log.best_val_loss;
  out << "\ncheckpoint " << res.checkpoint.string() << '\n';
  return res;
}

// ---- generate ----

GenerateResult cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& log) {
  require(o.corpus, "--corpus");
  if (o.threads < 1) throw UsageError("--threads must be >= 1");
  o.decode.validate();
  log_options(log, "generate", o);
  const auto lm = load_model(o.model_dir, o.checkpoint, o.vocab);
  const auto corpus = load_corpus(o.corpus);

  GenerateResult res;
  res.items = generate_all(lm.model, lm.vocab, corpus, lm.mask, o.decode, o.threads);
  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  res.generations = dir / "generations.jsonl";
  write_jsonl_atomic(res.generations, generations_jsonl(res.items, o.decode));

  RunManifest manifest{"generate", o};
  manifest.add_input("checkpoint", lm.checkpoint_path);
  manifest.add_input("vocab", lm.vocab_path);
  manifest.add_input("corpus", o.corpus);
  manifest.add_output("generations", res.generations);
  manifest.save(dir / "manifest.json");
  out << res.items.size() << " generations -> " << res.generations.string() << '\n';
  return res;
}

// ---- evaluate ----

MetricsReport cmd_evaluate(const EvaluateOptions& o, std::ostream& out, std::ostream& log) {
  require(o.generations, "--generations");
  require(o.corpus, "--corpus");
  log_options(log, "evaluate", o);
  const auto gens = read_generations(o.generations);
  const auto gold = load_corpus(o.corpus);
  auto report = evaluate_generations(gens, gold);
  report.label = o.label.empty() ? fs::path(o.generations).stem().string() : o.label;

  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  write_text(dir / "report.json", report.to_json(true) + "\n");
  write_text(dir / "report.txt", report.to_table(true));
  RunManifest manifest{"evaluate", o};
  manifest.add_input("generations", o.generations);
  manifest.add_input("corpus", o.corpus);
  manifest.add_output("report_json", dir / "report.json");
  manifest.add_output("report_txt", dir / "report.txt");
  manifest.save(dir / "manifest.json");
  out << report.to_table(true);
  return report;
}

// ---- bench-decoding ----

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.method.size());
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %9s\n", static_cast<int>(w), "Method", "Bleu-1", "Meteor",
                "Time(s)");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %7.4f  %7.4f  %9.3f\n", static_cast<int>(w), r.method.c_str(),
                  r.report.bleu1, r.report.meteor, r.seconds);
    os << buf;
  }
  return os.str();
}

BenchResult cmd_bench_decoding(const BenchOptions& o, std::ostream& out, std::ostream& log) {
  require(o.corpus, "--corpus");
  if (o.methods.empty()) throw UsageError("--methods is empty");
  if (o.threads < 1) throw UsageError("--threads must be >= 1");
  std::set<std::string> seen;
  for (const auto& m : o.methods) {
    strategy_from_string(m);
    if (!seen.insert(m).second) throw UsageError("method listed twice: " + m);
  }
  o.decode.validate();
  log_options(log, "bench-decoding", o);
  const auto lm = load_model(o.model_dir, o.checkpoint, o.vocab);
  const auto corpus = load_corpus(o.corpus);
  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);

  RunManifest manifest{"bench-decoding", o};
  manifest.add_input("checkpoint", lm.checkpoint_path);
  manifest.add_input("vocab", lm.vocab_path);
  manifest.add_input("corpus", o.corpus);

  BenchResult res;
  json rows = json::array();
  for (const auto& m : o.methods) {
    DecodeConfig cfg = o.decode;
    cfg.strategy = strategy_from_string(m);
    const auto t0 = std::chrono::steady_clock::now();
    const auto gens = generate_all(lm.model, lm.vocab, corpus, lm.mask, cfg, o.threads);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    BenchRow row{m, evaluate_generations(gens, corpus), secs};
    row.report.label = m;
    const auto path = dir / ("generations-" + m + ".jsonl");
    write_jsonl_atomic(path, generations_jsonl(gens, cfg));
    manifest.add_output("generations-" + m, path);
    log << m << ": " << secs << " s\n";
    rows.push_back({{"method", m}, {"config", cfg}, {"seconds", secs}, {"report", report_json(row.report)}});
    res.rows.push_back(std::move(row));
  }
  res.table = format_bench_table(res.rows);
  write_text(dir / "bench.json", json{{"rows", rows}}.dump(2) + "\n");
  write_text(dir / "bench.txt", res.table);
  manifest.add_output("bench_json", dir / "bench.json");
  manifest.add_output("bench_txt", dir / "bench.txt");
  manifest.save(dir / "manifest.json");
  out << res.table;
  return res;
}

// ---- ablate ----

namespace {

MetricsReport mean_report(const std::string& label, const std::vector<const MetricsReport*>& rs) {
  MetricsReport m;
  m.label = label;
  if (rs.empty()) return m;
  const double k = static_cast<double>(rs.size());
  for (const auto* r : rs) {
    m.bleu1 += r->bleu1 / k;
    m.bleu4 += r->bleu4 / k;
    m.bleu1_smoothed += r->bleu1_smoothed / k;
    m.bleu4_smoothed += r->bleu4_smoothed / k;
    m.meteor += r->meteor / k;
    m.examples = r->examples;
  }
  return m;
}

}  // namespace

AblationResult cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& log) {
  require(o.train, "--train");
  require(o.val, "--val");
  if (o.rows.empty()) throw UsageError("--rows is empty");
  if (o.seeds.empty()) throw UsageError("--seeds is empty");
  if (o.jobs < 1 || o.threads < 1) throw UsageError("--jobs and --threads must be >= 1");
  {
    std::set<std::string> labels;
    std::set<std::string> keys;
    for (const auto& r : o.rows) {
      if (!labels.insert(r).second) throw UsageError("duplicate ablation row " + r);
      if (!keys.insert(ModalityMask::parse(r).key()).second) throw UsageError("ablation row " + r + " repeats a mask");
    }
    std::set<std::uint64_t> seeds(o.seeds.begin(), o.seeds.end());
    if (seeds.size() != o.seeds.size()) throw UsageError("duplicate seed in --seeds");
  }
  o.train_cfg.validate();
  o.decode.validate();

  const auto train_corpus = load_corpus(o.train);
  const auto val_corpus = load_corpus(o.val);
  if (!(val_corpus.feature_dims == train_corpus.feature_dims)) {
    throw DimensionError("train and val corpora disagree on feature_dims");
  }
  const auto vocab = build_vocab(train_corpus, val_corpus, o.min_freq);
  ModelConfig base = o.model;
  base.vocab_size = vocab.size();
  base.feature_dims = train_corpus.feature_dims;
  base.validate();

  const fs::path dir = resolve_out(o.out);
  const fs::path cache = o.cache_dir.empty() ? dir / "cache" : resolve_out(o.cache_dir);
  fs::create_directories(cache);
  log_options(log, "ablate", o);

  const std::string train_hash = file_hash(o.train), val_hash = file_hash(o.val);

  struct Task {
    std::size_t seed_index, row_index;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < o.seeds.size(); ++s) {
    for (std::size_t r = 0; r < o.rows.size(); ++r) tasks.push_back({s, r});
  }
  AblationResult res;
  res.cells.resize(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::vector<fs::path> checkpoints(tasks.size());
  std::mutex log_mu;
  auto say = [&](const std::string& s) {
    std::lock_guard lock(log_mu);
    log << s << '\n' << std::flush;
  };

  auto run_task = [&](std::size_t i) {
    const auto [si, ri] = tasks[i];
    const std::uint64_t seed = o.seeds[si];
    const auto& label = o.rows[ri];
    auto& cell = res.cells[i];
    cell.label = label;
    cell.seed = seed;
    const auto mask = ModalityMask::parse(label);
    ModelConfig mc = base;
    mc.seed = seed;
    TrainConfig tc = o.train_cfg;
    tc.seed = seed;
    DecodeConfig dc = o.decode;
    dc.seed = seed;

    const json key_src = {{"model", mc},          {"training", tc},         {"mask", mask.key()},
                          {"train", train_hash},  {"val", val_hash},        {"vocab", hex64(vocab.fingerprint())},
                          {"min_freq", o.min_freq}, {"version", kToolVersion}};
    cell.cache_key = hex64(fnv1a(key_src.dump()));
    const fs::path ck = cache / (cell.cache_key + ".ckpt");
    checkpoints[i] = ck;

    AnyModel model = make_model(mc);
    if (fs::exists(ck)) {
      auto loaded = load_checkpoint(ck);
      if (!(config_of(loaded.model) == mc)) throw DataError("cached checkpoint " + ck.string() + " has another config");
      model = std::move(loaded.model);
      cell.best_val_loss = loaded.metadata.value("best_val_loss", 0.0);
      say("[" + label + " seed " + std::to_string(seed) + "] cached " + ck.string());
    } else {
      const std::string tag = "[" + label + " seed " + std::to_string(seed) + "] ";
      const ProgressFn progress = [&](const std::string& s) { say(tag + s); };
      const auto tlog = std::visit(
          [&](auto& m) { return train(m, train_corpus, val_corpus, vocab, mask, tc, progress); }, model);
      cell.best_val_loss = tlog.best_val_loss;
      const json meta = {{"vocab_fingerprint", hex64(vocab.fingerprint())},
                         {"modalities", mask.label()},
                         {"training", tc},
                         {"best_step", tlog.best_step},
                         {"best_val_loss", tlog.best_val_loss}};
      write_text(cache / (cell.cache_key + ".csv"), tlog.to_csv());
      const fs::path tmp = ck.string() + ".tmp";
      save_checkpoint(model, tmp, meta);
      fs::rename(tmp, ck);
    }
    const auto gens = generate_all(model, vocab, val_corpus, mask, dc, o.threads);
    cell.report = evaluate_generations(gens, val_corpus);
    cell.report.label = label;
    say("[" + label + " seed " + std::to_string(seed) + "] bleu-1 " + std::to_string(cell.report.bleu1));
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        run_task(i);
      } catch (const std::exception& e) {
        res.cells[i].error = e.what();
        errors[i] = std::current_exception();
        say("[" + res.cells[i].label + " seed " + std::to_string(res.cells[i].seed) + "] failed: " + e.what());
      }
    }
  };
  const int n = std::min<int>(o.jobs, static_cast<int>(tasks.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Tables and JSON carry no timing or paths, so reruns match byte-for-byte.
  std::ostringstream table;
  json cells = json::array();
  std::string failures;
  for (std::size_t s = 0; s < o.seeds.size(); ++s) {
    std::vector<MetricsReport> rows;
    for (std::size_t r = 0; r < o.rows.size(); ++r) {
      const auto& c = res.cells[s * o.rows.size() + r];
      json cj = {{"label", c.label},
                 {"seed", c.seed},
                 {"mask", ModalityMask::parse(c.label).key()},
                 {"cache_key", c.cache_key}};
      if (c.error.empty()) {
        rows.push_back(c.report);
        cj["best_val_loss"] = c.best_val_loss;
        cj["report"] = report_json(c.report);
      } else {
        cj["error"] = c.error;
        failures += "failed: " + c.label + " seed " + std::to_string(c.seed) + ": " + c.error + "\n";
      }
      cells.push_back(std::move(cj));
    }
    table << "seed " << o.seeds[s] << '\n' << format_table(rows) << '\n';
  }
  json mean = json::array();
  std::vector<MetricsReport> mean_rows;
  for (std::size_t r = 0; r < o.rows.size(); ++r) {
    std::vector<const MetricsReport*> ok;
    for (std::size_t s = 0; s < o.seeds.size(); ++s) {
      const auto& c = res.cells[s * o.rows.size() + r];
      if (c.error.empty()) ok.push_back(&c.report);
    }
    if (ok.empty()) continue;
    mean_rows.push_back(mean_report(o.rows[r], ok));
    mean.push_back({{"label", o.rows[r]},
                    {"seeds", ok.size()},
                    {"bleu1", mean_rows.back().bleu1},
                    {"bleu4", mean_rows.back().bleu4},
                    {"meteor", mean_rows.back().meteor}});
  }
  table << "mean over " << o.seeds.size() << " seed(s)\n" << format_table(mean_rows);
  table << failures;
  res.mean = mean_rows;
  res.table = table.str();

  fs::create_directories(dir);
  vocab.save(dir / "vocab.json");
  const json doc = {{"rows", o.rows}, {"seeds", o.seeds}, {"cells", cells}, {"mean", mean}};
  write_text(dir / "ablation.json", doc.dump(2) + "\n");
  write_text(dir / "ablation.txt", res.table);

  RunManifest manifest{"ablate", o};
  manifest.add_input("train", o.train);
  manifest.add_input("val", o.val);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (res.cells[i].error.empty()) {
      manifest.add_output("checkpoint " + res.cells[i].label + " seed " + std::to_string(res.cells[i].seed),
                          checkpoints[i]);
    }
  }
  manifest.add_output("vocab", dir / "vocab.json");
  manifest.add_output("ablation_json", dir / "ablation.json");
  manifest.add_output("ablation_txt", dir / "ablation.txt");
  manifest.save(dir / "manifest.json");
  out << res.table;

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return res;
}

}  // namespace mvqa::cli
