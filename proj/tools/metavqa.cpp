// metavqa: data generation, training, decoding, evaluation and the ablation sweep.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metavqa/commands.hpp"
#include "metavqa/error.hpp"
#include "metavqa/manifest.hpp"

using namespace mvqa;
using namespace mvqa::cli;

namespace {

// Finds the subcommand and any --config path before CLI11 runs, so config
// values become the defaults that explicit flags then override.
struct PreScan {
  std::string command;
  std::string config;
};

PreScan prescan(int argc, char** argv) {
  PreScan p;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      p.config = argv[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      p.config = a.substr(9);
    } else if (p.command.empty() && !a.empty() && a[0] != '-') {
      p.command = a;
    }
  }
  return p;
}

template <class Options>
void apply_config(const PreScan& p, Options& o) {
  if (p.config.empty()) return;
  const auto j = load_config(p.config);
  const auto raw = nlohmann::json::parse(read_text(p.config));
  if (raw.contains("command") && raw["command"].is_string() && raw["command"] != p.command) {
    throw UsageError("config " + p.config + " was written by '" + raw["command"].get<std::string>() +
                     "', not '" + p.command + "'");
  }
  try {
    from_json(j, o);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + p.config + ": " + e.what());
  }
}

struct EnumFlags {
  std::string precision;
  std::string strategy;
};

void model_flags(CLI::App* app, ModelConfig& m, EnumFlags& e) {
  e.precision = to_string(m.precision);
  app->add_option("--d-model", m.d_model, "Hidden size")->capture_default_str();
  app->add_option("--layers", m.n_layers, "Transformer blocks")->capture_default_str();
  app->add_option("--heads", m.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--d-ff", m.d_ff, "Feed-forward width")->capture_default_str();
  app->add_option("--max-seq-len", m.max_seq_len, "Position table size")->capture_default_str();
  app->add_option("--dropout", m.dropout, "Dropout rate")->capture_default_str();
  app->add_option("--init-std", m.init_std, "Weight init standard deviation")->capture_default_str();
  app->add_option("--model-seed", m.seed, "Initialisation seed")->capture_default_str();
  app->add_option("--precision", e.precision, "f32 or f64")->capture_default_str();
}

void train_flags(CLI::App* app, TrainConfig& t) {
  app->add_option("--lr", t.learning_rate, "AdamW learning rate")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Examples per step")->capture_default_str();
  app->add_option("--beta1", t.beta1)->capture_default_str();
  app->add_option("--beta2", t.beta2)->capture_default_str();
  app->add_option("--epsilon", t.epsilon)->capture_default_str();
  app->add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
  app->add_option("--max-steps", t.max_steps, "Step cap, 0 for none")->capture_default_str();
  app->add_option("--grad-clip", t.grad_clip_norm, "Global norm clip, <= 0 disables")->capture_default_str();
  app->add_option("--eval-every", t.eval_every, "Validation interval in steps, 0 for per epoch")
      ->capture_default_str();
  app->add_option("--patience", t.patience, "Evaluations without improvement before stopping")
      ->capture_default_str();
  app->add_option("--train-seed", t.seed, "Shuffle and dropout seed")->capture_default_str();
}

void decode_flags(CLI::App* app, DecodeConfig& d, EnumFlags& e, bool with_strategy) {
  e.strategy = to_string(d.strategy);
  if (with_strategy) app->add_option("--strategy", e.strategy, "greedy, beam or nucleus")->capture_default_str();
  app->add_option("--max-new-tokens", d.max_new_tokens)->capture_default_str();
  app->add_option("--beam-width", d.beam_width)->capture_default_str();
  app->add_option("--alpha", d.length_norm_alpha, "Beam length normalisation exponent")->capture_default_str();
  app->add_option("--top-p", d.top_p)->capture_default_str();
  app->add_option("--temperature", d.temperature)->capture_default_str();
  app->add_option("--seed", d.seed, "Sampling seed")->capture_default_str();
}

int run(int argc, char** argv) {
  const auto pre = prescan(argc, argv);

  CLI::App app{"metavqa: multimodal video QA with a decoder-only transformer"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config or manifest.json; flags override it");

  GenDataOptions gen;
  TrainOptions tr;
  GenerateOptions ge;
  EvaluateOptions ev;
  BenchOptions be;
  AblateOptions ab;
  EnumFlags tr_e, ge_e, be_e, ab_e;

  if (pre.command == "gen-data") apply_config(pre, gen);
  if (pre.command == "train") apply_config(pre, tr);
  if (pre.command == "generate") apply_config(pre, ge);
  if (pre.command == "evaluate") apply_config(pre, ev);
  if (pre.command == "bench-decoding") apply_config(pre, be);
  if (pre.command == "ablate") apply_config(pre, ab);

  auto* g = app.add_subcommand("gen-data", "Write a synthetic train/val/test corpus");
  g->add_option("--config", config_path);
  g->add_option("--seed", gen.synthetic.seed)->capture_default_str();
  g->add_option("--n", gen.synthetic.n_examples, "Number of examples")->capture_default_str();
  g->add_option("--metadata-signal", gen.synthetic.metadata_signal, "Fraction of metadata questions")
      ->capture_default_str();
  g->add_option("--persons", gen.synthetic.n_persons)->capture_default_str();
  g->add_option("--behaviors", gen.synthetic.n_behaviors)->capture_default_str();
  g->add_option("--emotions", gen.synthetic.n_emotions)->capture_default_str();
  g->add_option("--video-dim", gen.synthetic.feature_dims.video)->capture_default_str();
  g->add_option("--bbox-dim", gen.synthetic.feature_dims.bbox)->capture_default_str();
  g->add_option("--bbox-noise", gen.synthetic.bbox_noise)->capture_default_str();
  g->add_option("--split", gen.split, "train,val,test proportions")->delimiter(',')->expected(3);
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();

  auto* t = app.add_subcommand("train", "Train a model on a corpus");
  t->add_option("--config", config_path);
  t->add_option("--train", tr.train, "Training corpus (JSON lines)");
  t->add_option("--val", tr.val, "Validation corpus");
  t->add_option("--modalities", tr.modalities, "e.g. S, S+M, S+M,V,B or all")->capture_default_str();
  t->add_option("--min-freq", tr.min_freq)->capture_default_str();
  t->add_option("--vocab", tr.vocab, "Reuse an existing vocab.json");
  t->add_option("--dump-sequence", tr.dump_sequence, "Print the assembled slots of this qid and exit");
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  model_flags(t, tr.model, tr_e);
  train_flags(t, tr.train_cfg);

  auto* gn = app.add_subcommand("generate", "Decode answers for every example of a corpus");
  gn->add_option("--config", config_path);
  gn->add_option("--model-dir", ge.model_dir, "Directory written by train");
  gn->add_option("--checkpoint", ge.checkpoint);
  gn->add_option("--vocab", ge.vocab);
  gn->add_option("--corpus", ge.corpus);
  gn->add_option("--threads", ge.threads)->capture_default_str();
  gn->add_option("--out", ge.out, "Output directory")->capture_default_str();
  decode_flags(gn, ge.decode, ge_e, true);

  auto* e = app.add_subcommand("evaluate", "Score generations against gold answers");
  e->add_option("--config", config_path);
  e->add_option("--generations", ev.generations, "generations.jsonl");
  e->add_option("--corpus", ev.corpus, "Gold corpus");
  e->add_option("--label", ev.label, "Row label in the report");
  e->add_option("--out", ev.out, "Output directory")->capture_default_str();

  auto* b = app.add_subcommand("bench-decoding", "Compare decoding methods on one checkpoint");
  b->add_option("--config", config_path);
  b->add_option("--model-dir", be.model_dir);
  b->add_option("--checkpoint", be.checkpoint);
  b->add_option("--vocab", be.vocab);
  b->add_option("--corpus", be.corpus);
  b->add_option("--methods", be.methods, "Comma-separated methods")->delimiter(',');
  b->add_option("--threads", be.threads)->capture_default_str();
  b->add_option("--out", be.out, "Output directory")->capture_default_str();
  decode_flags(b, be.decode, be_e, false);

  auto* a = app.add_subcommand("ablate", "Train, decode and score each modality row");
  a->add_option("--config", config_path);
  a->add_option("--train", ab.train);
  a->add_option("--val", ab.val);
  a->add_option("--rows", ab.rows, "Row labels, space- or ';'-separated")->delimiter(';');
  a->add_option("--seeds", ab.seeds, "Comma-separated seeds")->delimiter(',');
  a->add_option("--min-freq", ab.min_freq)->capture_default_str();
  a->add_option("--jobs", ab.jobs, "Rows trained concurrently")->capture_default_str();
  a->add_option("--threads", ab.threads, "Decoding threads per row")->capture_default_str();
  a->add_option("--cache-dir", ab.cache_dir, "Checkpoint cache (default <out>/cache)");
  a->add_option("--out", ab.out, "Output directory")->capture_default_str();
  model_flags(a, ab.model, ab_e);
  train_flags(a, ab.train_cfg);
  decode_flags(a, ab.decode, ab_e, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  auto& out = std::cout;
  auto& log = std::cerr;
  if (g->parsed()) {
    cmd_gen_data(gen, out, log);
  } else if (t->parsed()) {
    tr.model.precision = precision_from_string(tr_e.precision);
    cmd_train(tr, out, log);
  } else if (gn->parsed()) {
    ge.decode.strategy = strategy_from_string(ge_e.strategy);
    cmd_generate(ge, out, log);
  } else if (e->parsed()) {
    cmd_evaluate(ev, out, log);
  } else if (b->parsed()) {
    cmd_bench_decoding(be, out, log);
  } else if (a->parsed()) {
    ab.model.precision = precision_from_string(ab_e.precision);
    ab.decode.strategy = strategy_from_string(ab_e.strategy);
    cmd_ablate(ab, out, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
