// Acceptance suite: one PASS/FAIL line per criterion.
// usage: metavqa_acceptance <work-dir> <metavqa-binary> [criterion...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metavqa/checkpoint.hpp"
#include "metavqa/commands.hpp"
#include "metavqa/datamodel.hpp"
#include "metavqa/decoding.hpp"
#include "metavqa/hash.hpp"
#include "metavqa/manifest.hpp"
#include "metavqa/metrics.hpp"
#include "metavqa/model.hpp"
#include "metavqa/sequence.hpp"
#include "metavqa/tokenizer.hpp"
#include "metavqa/training.hpp"
#include "oracles.hpp"

using namespace mvqa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;
std::string g_binary;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs the metavqa executable; stdout and stderr go to log.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = quote(g_binary) + " " + args + " >" + quote(log) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// ---- 1 ----

Outcome gradient_check() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 6;
  c.vocab_size = 16;
  c.feature_dims = {3, 4};
  c.dropout = 0.0;
  c.init_std = 0.5;
  c.precision = Precision::kFloat64;
  double worst = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    c.seed = 100 + trial;
    Transformer<double> model(c);
    Rng rng(trial);
    AssembledSequence s;
    s.qid = "grad";
    std::vector<double> v(3), b(4);
    for (auto& x : v) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    s.slots.push_back({PayloadKind::kVideo, special::kPad, v, Segment::kVideo, 0});
    s.slots.push_back({PayloadKind::kBox, special::kPad, b, Segment::kBoxFeature, 1});
    s.slots.push_back(Slot::make_token(rng.uniform_int(13, 15), Segment::kPerson, 2));
    s.slots.push_back(Slot::make_token(rng.uniform_int(13, 15), Segment::kQuestion, 3));
    const int ans = rng.uniform_int(13, 15);
    s.slots.push_back(Slot::make_token(ans, Segment::kAnswer, 4));
    s.slots.push_back(Slot::make_token(special::kEos, Segment::kAnswer, 5));
    s.loss_mask = {0, 0, 0, 1, 1, 0};
    s.targets = {-1, -1, -1, ans, special::kEos, -1};
    const auto r = oracle::finite_difference_check(model, s, 1e-4);
    checked += r.checked;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_tensor = r.worst_tensor;
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " (" + worst_tensor + ") over " +
                            std::to_string(checked) + " parameter checks, 5 models"};
}

// ---- 2 ----

Slot random_slot(Rng& rng, const ModelConfig& c, int pos) {
  const int kind = rng.uniform_int(0, 2);
  if (kind == 0) {
    std::vector<double> f(static_cast<std::size_t>(c.feature_dims.video));
    for (auto& x : f) x = rng.normal();
    return {PayloadKind::kVideo, special::kPad, f, Segment::kVideo, pos};
  }
  if (kind == 1) {
    std::vector<double> f(static_cast<std::size_t>(c.feature_dims.bbox));
    for (auto& x : f) x = rng.normal();
    return {PayloadKind::kBox, special::kPad, f, Segment::kBoxFeature, pos};
  }
  const auto seg = static_cast<Segment>(rng.uniform_int(2, kNumSegments - 1));
  return Slot::make_token(rng.uniform_int(0, c.vocab_size - 1), seg, pos);
}

Outcome causality() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = 64;
  c.max_seq_len = 24;
  c.vocab_size = 40;
  c.feature_dims = {6, 5};
  c.init_std = 0.2;
  Transformer<float> model(c);
  Rng rng(2024);
  int violations = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = rng.uniform_int(2, c.max_seq_len);
    AssembledSequence s;
    s.qid = "causal";
    for (int p = 0; p < n; ++p) s.slots.push_back(random_slot(rng, c, p));
    s.loss_mask.assign(static_cast<std::size_t>(n), 0);
    s.targets.assign(static_cast<std::size_t>(n), -1);
    const int cut = rng.uniform_int(0, n - 2);
    AssembledSequence t = s;
    for (int p = cut + 1; p < n; ++p) t.slots[static_cast<std::size_t>(p)] = random_slot(rng, c, p);
    const auto a = model.forward(s).logits;
    const auto b = model.forward(t).logits;
    for (int r = 0; r <= cut; ++r) {
      for (int k = 0; k < c.vocab_size; ++k) {
        const float x = a(r, k), y = b(r, k);
        if (std::memcmp(&x, &y, sizeof x) != 0) {
          ++violations;
          r = cut + 1;
          break;
        }
      }
    }
  }
  return {violations == 0, std::to_string(violations) + " of " + std::to_string(trials) +
                               " future-perturbation trials changed a past logit (bitwise)"};
}

// ---- 3 ----

Outcome sequence_accounting() {
  std::size_t examples = 0, mismatches = 0, identity_failures = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    cfg.n_examples = 100;
    cfg.frames_per_clip = {1, 5};
    cfg.chars_per_frame = {1, 3};
    cfg.subtitles_per_clip = {1, 5};
    cfg.metadata_signal = 0.1 * static_cast<double>(seed - 1);
    cfg.feature_dims = {4, 3};
    const auto corpus = generate_synthetic(cfg);
    const auto vocab = Vocabulary::build(std::span<const Corpus>(&corpus, 1), 1);
    for (const auto& ex : corpus.examples) {
      ++examples;
      // Counts read straight off the raw fields.
      std::size_t N = ex.frames.size(), I = 0, M = ex.subtitles.size(), J = 0, L = normalize(ex.question).size();
      for (const auto& f : ex.frames) I += f.characters.size();
      for (const auto& s : ex.subtitles) J += normalize(s.text).size();
      if (paper_sequence_length(ex) != N + I + M + J + L) ++identity_failures;
      for (int bits = 0; bits < 16; ++bits) {
        const ModalityMask mask{bool(bits & 1), bool(bits & 2), bool(bits & 4), bool(bits & 8)};
        const std::size_t expected = (mask.video ? N : 0) + (mask.bbox ? I : 0) + (mask.metadata ? 3 * I : 0) +
                                     (mask.subtitles ? M + J : 0) + L;
        const auto seq = assemble(ex, vocab, mask, false, 100000);
        if (seq.size() != expanded_length(ex, mask) || seq.size() != expected) ++mismatches;
      }
    }
  }
  return {examples == 1000 && mismatches == 0 && identity_failures == 0,
          std::to_string(examples) + " examples x 16 masks: " + std::to_string(mismatches) +
              " length mismatches, " + std::to_string(identity_failures) + " count-identity failures"};
}

// ---- 4 ----

Outcome beam_oracle() {
  int beam_mismatch = 0, greedy_mismatch = 0;
  const int models = 50;
  for (int m = 0; m < models; ++m) {
    const oracle::ToyLM lm(4, std::nullopt, 7000 + static_cast<std::uint64_t>(m));
    DecodeConfig cfg;
    cfg.strategy = Strategy::kBeam;
    cfg.max_new_tokens = 3;
    cfg.beam_width = 64;
    cfg.length_norm_alpha = 0.0;
    const auto best = oracle::exhaustive_best(lm, 3);
    if (beam_search(lm, cfg).tokens != best.tokens) ++beam_mismatch;
    cfg.beam_width = 1;
    DecodeConfig g = cfg;
    g.strategy = Strategy::kGreedy;
    if (beam_search(lm, cfg).tokens != greedy_decode(lm, g).tokens) ++greedy_mismatch;
  }
  return {beam_mismatch == 0 && greedy_mismatch == 0,
          std::to_string(models - beam_mismatch) + "/" + std::to_string(models) +
              " width-64 beams equal the exhaustive argmax over 64 sequences; " +
              std::to_string(models - greedy_mismatch) + "/" + std::to_string(models) + " width-1 beams equal greedy"};
}

// ---- 5 ----

Outcome nucleus() {
  std::vector<std::string> problems;
  const std::vector<double> p4 = {0.5, 0.3, 0.15, 0.05};
  if (nucleus_set(p4, 0.8) != std::vector<int>{0, 1}) problems.push_back("nucleus_set({.5,.3,.15,.05}, .8)");
  if (nucleus_set(p4, 0.81) != std::vector<int>{0, 1, 2}) problems.push_back("nucleus_set(.81)");
  if (nucleus_set(p4, 1.0) != std::vector<int>{0, 1, 2, 3}) problems.push_back("nucleus_set(1.0)");
  if (nucleus_set(p4, 1e-9) != std::vector<int>{0}) problems.push_back("nucleus_set(1e-9)");

  // Frequencies of 10,000 draws against the renormalized nucleus.
  const std::vector<double> probs = {0.05, 0.35, 0.08, 0.25, 0.15, 0.12};
  const double top_p = 0.8;
  // Sorted: .35 .25 .15 .12 -> cumulative .87 >= .8, nucleus {1, 3, 4, 5}.
  const std::set<int> support = {1, 3, 4, 5};
  const double mass = 0.35 + 0.25 + 0.15 + 0.12;
  const int draws = 10000;
  std::vector<int> counts(probs.size(), 0);
  Rng rng(99);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_nucleus(probs, top_p, rng))];
  double worst_sigma = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (!support.contains(static_cast<int>(k))) {
      if (counts[k] != 0) problems.push_back("draw outside the nucleus");
      continue;
    }
    const double q = probs[k] / mass;
    const double sd = std::sqrt(draws * q * (1 - q));
    worst_sigma = std::max(worst_sigma, std::abs(counts[k] - draws * q) / sd);
  }
  if (worst_sigma > 3.0) problems.push_back("frequency outside 3 sigma");

  // Trained fixture: a tiny-p nucleus collapses to greedy.
  SyntheticConfig sc;
  sc.n_examples = 16;
  sc.seed = 5;
  sc.feature_dims = {8, 8};
  const auto corpus = generate_synthetic(sc);
  const auto vocab = Vocabulary::build(std::span<const Corpus>(&corpus, 1), 1);
  const auto parts = split_corpus(corpus, {8, 8});
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 64;
  mc.dropout = 0.0;
  mc.vocab_size = vocab.size();
  mc.feature_dims = corpus.feature_dims;
  Transformer<float> model(mc);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.max_epochs = 40;
  train(model, parts[0], Corpus{}, vocab, ModalityMask::all(), tc);
  int differ = 0;
  for (const auto& ex : corpus.examples) {
    const auto ctx = assemble(ex, vocab, ModalityMask::all(), false, mc.max_seq_len);
    DecodeConfig g;
    DecodeConfig n = g;
    n.strategy = Strategy::kNucleus;
    n.top_p = 1e-9;
    n.seed = fnv1a(ex.qid);
    if (decode(model, ctx, g).tokens != decode(model, ctx, n).tokens) ++differ;
  }
  if (differ) problems.push_back(std::to_string(differ) + " top_p=1e-9 decodes differ from greedy");
  std::string detail = "nucleus_set cases ok; 10,000 draws within " + fmt("%.2f", worst_sigma) +
                       " sigma of the renormalized nucleus; top_p=1e-9 equals greedy on " +
                       std::to_string(corpus.examples.size() - static_cast<std::size_t>(differ)) + "/" +
                       std::to_string(corpus.examples.size()) + " fixture contexts";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

// ---- 6 ----

Outcome metric_oracles() {
  std::vector<std::string> problems;
  const std::vector<TokenList> c = {normalize("the the the the the the the")};
  const std::vector<TokenList> r = {normalize("the cat is on the mat")};
  const auto s = bleu_stats(c, r, 1, false);
  if (!(s.precisions[0] == 2.0 / 7.0)) problems.push_back("p1 != 2/7");
  if (!(s.score == s.brevity_penalty * 2.0 / 7.0)) problems.push_back("BLEU-1 != BP * 2/7");

  Rng rng(6);
  const char* words[] = {"a", "b", "c", "d", "e"};
  auto sentence = [&](int lo, int hi) {
    TokenList out;
    const int n = rng.uniform_int(lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(words[rng.uniform_int(0, 4)]);
    return out;
  };
  std::vector<TokenList> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(sentence(1, 12));
  for (int n = 1; n <= 4; ++n) {
    if (bleu(xs, xs, n, false) != 1.0) problems.push_back("BLEU-" + std::to_string(n) + "(x,x) != 1");
  }
  int meteor_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const auto a = sentence(0, 6);
    const auto b = sentence(0, 6);
    const auto [m, ch] = oracle::brute_force_alignment(a, b);
    const double want = (a.empty() || b.empty()) ? 0.0 : oracle::meteor_from_alignment(a.size(), b.size(), m, ch);
    const auto al = meteor_align(a, b);
    if (al.matches != m || al.chunks != ch || std::abs(meteor_lite(a, b) - want) > 1e-15) ++meteor_bad;
  }
  if (meteor_bad) problems.push_back(std::to_string(meteor_bad) + " METEOR-lite pairs disagree with the oracle");
  std::string detail = "p1 = " + fmt("%.17g", s.precisions[0]) + " (2/7), BLEU-1..4(x,x) = 1, 200/200 METEOR-lite pairs match the brute-force alignment";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

// ---- 7 ----

struct OverfitFixture {
  fs::path dir;  // model.ckpt + vocab.json
  fs::path corpus;  // 8 trained examples plus 16 held out
};
OverfitFixture g_fixture;

Outcome overfit() {
  SyntheticConfig sc;
  sc.n_examples = 24;
  sc.seed = 11;
  const auto corpus = generate_synthetic(sc);
  const auto vocab = Vocabulary::build(std::span<const Corpus>(&corpus, 1), 1);
  const auto train8 = split_corpus(corpus, {8})[0];

  ModelConfig mc;  // desk-scale defaults
  mc.vocab_size = vocab.size();
  mc.feature_dims = corpus.feature_dims;
  Transformer<float> model(mc);
  TrainConfig tc;  // wd 1e-5, batch 1
  tc.learning_rate = 1e-3;
  tc.max_steps = 2000;
  tc.max_epochs = 250;
  tc.eval_every = 8;
  const auto seqs = assemble_corpus(train8, vocab, ModalityMask::all(), true, mc.max_seq_len);
  const auto log = train(model, std::span<const AssembledSequence>(seqs), std::span<const AssembledSequence>(seqs), tc);
  std::int64_t first_below = -1;
  for (const auto& st : log.steps) {
    if (st.val_loss && *st.val_loss < 0.05) {
      first_below = st.step;
      break;
    }
  }
  const double loss = mean_loss(model, std::span<const AssembledSequence>(seqs));
  int exact = 0;
  for (const auto& ex : train8.examples) {
    const auto ctx = assemble(ex, vocab, ModalityMask::all(), false, mc.max_seq_len);
    const auto r = decode(model, ctx, DecodeConfig{});
    if (vocab.decode_tokens(r.tokens) == normalize(ex.answer) && !r.tokens.empty() && r.tokens.back() == special::kEos)
      ++exact;
  }

  g_fixture.dir = g_work / "fixture";
  fs::create_directories(g_fixture.dir);
  save_checkpoint(model, g_fixture.dir / "model.ckpt",
                  {{"vocab_fingerprint", hex64(vocab.fingerprint())}, {"modalities", ModalityMask::all().label()}});
  vocab.save(g_fixture.dir / "vocab.json");
  g_fixture.corpus = g_fixture.dir / "corpus.jsonl";
  save_corpus(g_fixture.corpus, corpus);

  const bool pass = loss < 0.05 && first_below > 0 && first_below <= 2000 && exact == 8;
  return {pass, "mean loss " + fmt("%.4f", loss) + " (first < 0.05 at step " + std::to_string(first_below) +
                    " of " + std::to_string(log.steps.size()) + "); greedy exact answers " + std::to_string(exact) +
                    "/8"};
}

// ---- 8 ----

fs::path g_c8_data, g_c8_ablation;
bool g_c8_ran = false;

cli::AblateOptions directional_options() {
  cli::AblateOptions a;
  a.rows = {"S", "S+M"};
  a.seeds = {1, 2, 3};
  a.model.dropout = 0.0;
  a.train_cfg.learning_rate = 1e-3;
  a.train_cfg.max_epochs = 15;
  return a;
}

Outcome directional() {
  // Start clean so every run retrains instead of reading an old cache.
  fs::remove_all(g_work / "c8");
  std::ostringstream sink;
  cli::GenDataOptions g;
  g.synthetic.seed = 7;
  g.synthetic.n_examples = 700;
  g.synthetic.metadata_signal = 0.7;
  g.split = {600, 100, 0};
  g_c8_data = g_work / "c8" / "data";
  g.out = g_c8_data.string();
  cli::cmd_gen_data(g, sink, sink);

  auto a = directional_options();
  a.train = (g_c8_data / "train.jsonl").string();
  a.val = (g_c8_data / "val.jsonl").string();
  g_c8_ablation = g_work / "c8" / "ablation";
  a.out = g_c8_ablation.string();
  a.cache_dir = (g_work / "c8" / "cache").string();
  std::ostringstream table;
  const auto res = cli::cmd_ablate(a, table, std::cerr);
  g_c8_ran = true;
  std::cout << table.str();

  int holds = 0;
  std::string margins;
  for (std::size_t s = 0; s < a.seeds.size(); ++s) {
    const double sb = res.cells[s * 2].report.bleu1, smb = res.cells[s * 2 + 1].report.bleu1;
    if (smb - sb >= 0.05) ++holds;
    margins += (s ? ", " : "") + std::string("seed ") + std::to_string(a.seeds[s]) + ": S " + fmt("%.4f", sb) +
               " -> S+M " + fmt("%.4f", smb) + " (" + fmt("%+.4f", smb - sb) + ")";
  }
  return {holds >= 2, std::to_string(holds) + "/3 seeds with margin >= 0.05; " + margins};
}

// ---- 9 ----

Outcome determinism() {
  if (!g_c8_ran) return {false, "criterion 8 did not produce manifests"};
  const fs::path root = g_work / "c9";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::string> problems;

  const int rc1 = run_cli("gen-data --config " + quote(g_c8_data / "manifest.json") + " --out " + quote(root / "data"),
                          root / "gen-data.log");
  if (rc1 != 0) problems.push_back("gen-data rerun exited " + std::to_string(rc1));
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    if (!fs::exists(root / "data" / f) || read_text(root / "data" / f) != read_text(g_c8_data / f))
      problems.push_back(std::string(f) + " differs");
  }
  const auto manifest = RunManifest::load(g_c8_ablation / "manifest.json");
  for (const char* name : {"train", "val"}) {
    const auto path = root / "data" / (std::string(name) + ".jsonl");
    if (fs::exists(path) && manifest.inputs[name]["fnv1a"] != file_hash(path))
      problems.push_back(std::string(name) + " hash differs from the manifest");
  }

  const int rc2 = run_cli("ablate --config " + quote(g_c8_ablation / "manifest.json") + " --train " +
                              quote(root / "data" / "train.jsonl") + " --val " + quote(root / "data" / "val.jsonl") +
                              " --cache-dir " + quote(root / "cache") + " --out " + quote(root / "ablation"),
                          root / "ablate.log");
  if (rc2 != 0) problems.push_back("ablate rerun exited " + std::to_string(rc2));
  if (read_text(root / "ablate.log").find("cached") != std::string::npos) problems.push_back("rerun hit a cache");
  for (const char* f : {"ablation.txt", "ablation.json", "vocab.json"}) {
    if (!fs::exists(root / "ablation" / f) || read_text(root / "ablation" / f) != read_text(g_c8_ablation / f))
      problems.push_back(std::string(f) + " differs");
  }
  std::string detail = "gen-data and ablate rerun from their manifests with fresh output and cache; "
                       "corpora, ablation.txt, ablation.json and vocab.json identical byte-for-byte";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

// ---- 10 ----

Outcome bench_equivalence() {
  if (g_fixture.dir.empty()) return {false, "criterion 7 fixture missing"};
  const fs::path root = g_work / "c10";
  fs::remove_all(root);
  std::vector<std::string> problems;

  cli::BenchOptions b;
  b.model_dir = g_fixture.dir.string();
  b.corpus = g_fixture.corpus.string();
  b.decode.seed = 17;
  b.out = (root / "bench").string();
  std::ostringstream out, log;
  const auto bench = cli::cmd_bench_decoding(b, out, log);

  // Shape: header plus one row per method, positive times.
  std::istringstream table(bench.table);
  std::string header;
  std::getline(table, header);
  std::istringstream hs(header);
  std::vector<std::string> cols{std::istream_iterator<std::string>(hs), {}};
  if (cols != std::vector<std::string>{"Method", "Bleu-1", "Meteor", "Time(s)"}) problems.push_back("table header");
  if (bench.rows.size() != b.methods.size()) problems.push_back("row count");

  std::string values;
  for (const auto& row : bench.rows) {
    if (!(row.seconds > 0.0)) problems.push_back(row.method + " time not positive");
    const auto gdir = root / ("generate-" + row.method);
    const auto edir = root / ("evaluate-" + row.method);
    const int rc = run_cli("generate --model-dir " + quote(g_fixture.dir) + " --corpus " + quote(g_fixture.corpus) +
                               " --strategy " + row.method + " --seed 17 --out " + quote(gdir),
                           root / ("generate-" + row.method + ".log"));
    const int rc2 = run_cli("evaluate --generations " + quote(gdir / "generations.jsonl") + " --corpus " +
                                quote(g_fixture.corpus) + " --out " + quote(edir),
                            root / ("evaluate-" + row.method + ".log"));
    if (rc != 0 || rc2 != 0) {
      problems.push_back(row.method + " pipeline failed");
      continue;
    }
    const auto rep = nlohmann::json::parse(read_text(edir / "report.json"));
    const double bleu1 = rep.at("bleu1").get<double>(), meteor = rep.at("meteor").get<double>();
    if (bleu1 != row.report.bleu1 || meteor != row.report.meteor) problems.push_back(row.method + " values differ");
    values += " " + row.method + " " + fmt("%.4f", bleu1) + "/" + fmt("%.4f", meteor) + " in " +
              fmt("%.3f", row.seconds) + " s;";
  }
  std::cout << bench.table;
  std::string detail = "Method x {Bleu-1, Meteor, Time(s)} table; generate+evaluate reproduces every row exactly:" + values;
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " [" + p + "]";
  }
  return {problems.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: metavqa_acceptance <work-dir> <metavqa-binary> [criterion...]\n";
    return 1;
  }
  g_work = fs::absolute(argv[1]);
  g_binary = fs::absolute(argv[2]).string();
  fs::create_directories(g_work);
  std::set<int> only;
  for (int i = 3; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 60, gradient_check},
      {2, "causality", 30, causality},
      {3, "sequence accounting", 10, sequence_accounting},
      {4, "beam oracle", 30, beam_oracle},
      {5, "nucleus correctness", 60, nucleus},
      {6, "metric oracles", 60, metric_oracles},
      {7, "overfit", 300, overfit},
      {8, "directional ablation (S vs S+M)", 1800, directional},
      {9, "determinism from manifests", 0, determinism},
      {10, "bench-decoding equivalence", 0, bench_equivalence},
  };

  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
    }
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s  %s (%.1f s): ", c.id, o.pass ? "PASS" : "FAIL", c.name, secs);
    lines.push_back(head + o.detail);
    std::cout << lines.back() << std::endl;
    if (!o.pass) ++failed;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
