// Command-line frontend for multi-behavior alignment training:
//   synth              generate a synthetic two-behavior dataset
//   pretrain           train the two behavior models with pairwise ranking
//   train              run alignment training on top of the pretrained pair
//   evaluate           top-k report (Recall/NDCG at 10 and 20) on the test set
//   export-embeddings  per-item embedding rows tagged by user interactions

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mba/mba.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string manifest;
  std::string outdir = "out";
  mba::Hyperparams h;
};

void add_hyperparam_options(CLI::App& cmd, mba::Hyperparams& h) {
  cmd.add_option("--alpha", h.alpha, "weight of the alignment KL terms");
  cmd.add_option("--beta", h.beta, "inference blend between the latent and pretrained target model");
  cmd.add_option("--c1", h.c1, "large positive stand-in used in the first alternating step");
  cmd.add_option("--c2", h.c2, "large positive stand-in used in the second alternating step");
  cmd.add_option("--lr", h.lr, "Adam learning rate");
  cmd.add_option("--dim", h.dim, "embedding size");
  cmd.add_option("--l2", h.l2, "L2 weight decay");
  cmd.add_option("--batch-size", h.batch_size, "minibatch size");
  cmd.add_option("--patience", h.patience, "early-stopping patience in epochs");
  cmd.add_option("--max-epochs", h.max_epochs, "epoch cap");
  cmd.add_option("--eps", h.eps, "probability clamp");
  cmd.add_option("--seed", h.seed, "training seed");
}

void add_common_options(CLI::App& cmd, RunConfig& cfg) {
  cmd.add_option("--config", "flat key=value config file; explicit flags win");
  cmd.add_option("--manifest", cfg.manifest,
                 "dataset manifest (clicks=, purchases=, split=, seed=)")
      ->required();
  cmd.add_option("--outdir", cfg.outdir, "output directory");
  add_hyperparam_options(cmd, cfg.h);
}

/// Applies a flat key=value config file by injecting "--key=value" arguments
/// for every key not already given on the command line. The --config token
/// itself is consumed here, before CLI11 sees the argument list.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t n = 0; n < args.size(); ++n) {
    if (args[n] == "--config") {
      if (n + 1 >= args.size()) throw std::runtime_error("--config needs a file path");
      config_path = args[n + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(n),
                 args.begin() + static_cast<std::ptrdiff_t>(n) + 2);
      break;
    }
    if (args[n].rfind("--config=", 0) == 0) {
      config_path = args[n].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open config file: " + config_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(config_path + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) args.push_back(flag + "=" + line.substr(eq + 1));
  }
  return args;
}

mba::SplitDataset load_from_manifest(const RunConfig& cfg) {
  const auto manifest = mba::load_manifest(cfg.manifest);
  return mba::load_dataset(manifest);
}

void check_against_dataset(const mba::FactorModel<float>& m, const mba::SplitDataset& ds,
                           const std::string& name) {
  if (m.num_users() != ds.num_users() || m.num_items() != ds.num_items()) {
    throw std::runtime_error(name + " shape " + std::to_string(m.num_users()) + "x" +
                             std::to_string(m.num_items()) +
                             " (users x items) does not match dataset " +
                             std::to_string(ds.num_users()) + "x" +
                             std::to_string(ds.num_items()));
  }
}

unsigned eval_threads() {
  if (const char* env = std::getenv("MBA_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return std::clamp(hw, 1u, 8u);
}

// ---------------------------------------------------------------------------

int cmd_pretrain(const RunConfig& cfg) {
  mba::require_valid(cfg.h);
  const auto ds = load_from_manifest(cfg);
  fs::create_directories(cfg.outdir);

  std::ofstream log(fs::path(cfg.outdir) / "pretrain_log.csv", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open pretrain log in " + cfg.outdir);
  log << "behavior,epoch,loss,val_recall@20\n";
  mba::PretrainOptions opts;
  opts.log = &log;

  auto f = mba::bpr_pretrain<float>(ds.train_f, cfg.h, opts);
  auto g = mba::bpr_pretrain<float>(ds.train_g, cfg.h, opts);

  const auto f_path = (fs::path(cfg.outdir) / "pretrain_f.mba1").string();
  const auto g_path = (fs::path(cfg.outdir) / "pretrain_g.mba1").string();
  mba::save_checkpoint(f.model, f_path);
  mba::save_checkpoint(g.model, g_path);

  std::cout << "pretrained target model:    " << f_path << " (" << f.epochs_run
            << " epochs, best val recall@20 " << f.best_val_recall << ")\n";
  std::cout << "pretrained auxiliary model: " << g_path << " (" << g.epochs_run
            << " epochs, best val recall@20 " << g.best_val_recall << ")\n";
  return 0;
}

int run_training(const RunConfig& cfg, const mba::SplitDataset& ds, const std::string& outdir,
                 const std::string& pretrain_dir, bool co_train, bool resume) {
  fs::create_directories(outdir);

  mba::FrozenModel<float> f, g;
  if (co_train) {
    // ablation: no pretraining; the behavior models start random and train
    // through the KL terms
    f = mba::freeze(mba::init_model<float>(ds.num_users(), ds.num_items(), cfg.h.dim,
                                           mba::mix_seed(cfg.h.seed, 0xf0)));
    g = mba::freeze(mba::init_model<float>(ds.num_users(), ds.num_items(), cfg.h.dim,
                                           mba::mix_seed(cfg.h.seed, 0xf1)));
  } else {
    const auto f_path = (fs::path(pretrain_dir) / "pretrain_f.mba1").string();
    const auto g_path = (fs::path(pretrain_dir) / "pretrain_g.mba1").string();
    if (!fs::exists(f_path) || !fs::exists(g_path)) {
      throw std::runtime_error("pretrained checkpoints not found in " + pretrain_dir +
                               "; run the pretrain subcommand first");
    }
    auto fm = mba::load_checkpoint<float>(f_path);
    auto gm = mba::load_checkpoint<float>(g_path);
    check_against_dataset(fm, ds, "pretrained target checkpoint");
    check_against_dataset(gm, ds, "pretrained auxiliary checkpoint");
    f = mba::freeze(std::move(fm));
    g = mba::freeze(std::move(gm));
  }

  const auto state_path = (fs::path(outdir) / "train_state.bin").string();
  const bool resuming = resume && fs::exists(state_path);

  std::ofstream log(fs::path(outdir) / "train_log.csv",
                    resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot open train log in " + outdir);

  mba::MbaTrainOptions opts;
  opts.co_train_fg = co_train;
  opts.log_csv = &log;
  opts.state_path = state_path;

  mba::MbaTrainer<float> trainer(ds, std::move(f), std::move(g), cfg.h, opts);
  if (resuming) {
    trainer.load_state(state_path);
    std::cout << "resuming from " << state_path << " at epoch " << trainer.epoch() << "\n";
  }
  const auto result = trainer.run();

  auto save = [&](const mba::FactorModel<float>& m, const char* name) {
    mba::save_checkpoint(m, (fs::path(outdir) / name).string());
  };
  save(result.models.t, "t_theta.mba1");
  save(result.models.hf_pos, "hf_pos.mba1");
  save(result.models.hf_neg, "hf_neg.mba1");
  save(result.models.hg_pos, "hg_pos.mba1");
  save(result.models.hg_neg, "hg_neg.mba1");
  if (co_train) {
    save(result.models.f.model(), "cotrain_f.mba1");
    save(result.models.g.model(), "cotrain_g.mba1");
  }

  json summary = {
      {"best_epoch", result.best_epoch},
      {"best_val_recall20", result.best_val_recall},
      {"epochs_run", result.epochs_run},
      {"co_train_fg", co_train},
      {"alpha", cfg.h.alpha},
      {"beta", cfg.h.beta},
      {"c1", cfg.h.c1},
      {"c2", cfg.h.c2},
      {"lr", cfg.h.lr},
      {"dim", cfg.h.dim},
      {"l2", cfg.h.l2},
      {"batch_size", cfg.h.batch_size},
      {"patience", cfg.h.patience},
      {"max_epochs", cfg.h.max_epochs},
      {"seed", cfg.h.seed},
  };
  std::ofstream summary_out(fs::path(outdir) / "summary.json", std::ios::trunc);
  summary_out << summary.dump(2) << "\n";
  if (!summary_out) throw std::runtime_error("cannot write summary.json in " + outdir);

  std::cout << "trained " << result.epochs_run << " epochs; best epoch " << result.best_epoch
            << " with val recall@20 " << result.best_val_recall << "; checkpoints in " << outdir
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& pretrain_dir, bool alpha_grid,
              bool co_train, bool resume) {
  mba::require_valid(cfg.h);
  const auto ds = load_from_manifest(cfg);
  const std::string pdir = pretrain_dir.empty() ? cfg.outdir : pretrain_dir;

  if (!alpha_grid) {
    return run_training(cfg, ds, cfg.outdir, pdir, co_train, resume);
  }
  for (double alpha : {1.0, 10.0, 100.0, 1000.0}) {
    RunConfig sweep = cfg;
    sweep.h.alpha = alpha;
    std::ostringstream sub;
    sub << cfg.outdir << "/alpha_" << alpha;
    std::cout << "--- alpha = " << alpha << " ---\n";
    run_training(sweep, ds, sub.str(), pdir, co_train, resume);
  }
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_dir,
                 const std::string& pretrain_dir) {
  mba::require_valid(cfg.h);
  const auto ds = load_from_manifest(cfg);
  const std::string cdir = checkpoint_dir.empty() ? cfg.outdir : checkpoint_dir;
  const std::string pdir = pretrain_dir.empty() ? cfg.outdir : pretrain_dir;

  auto t = mba::load_checkpoint<float>((fs::path(cdir) / "t_theta.mba1").string());
  auto f = mba::load_checkpoint<float>((fs::path(pdir) / "pretrain_f.mba1").string());
  check_against_dataset(t, ds, "latent model checkpoint");
  check_against_dataset(f, ds, "pretrained target checkpoint");

  mba::EvalOptions opts;
  opts.threads = eval_threads();
  const std::uint32_t cutoffs[2] = {10, 20};
  const auto report =
      mba::evaluate(t, mba::freeze(std::move(f)), ds, cfg.h.beta, cutoffs, cfg.h.eps, opts);

  fs::create_directories(cfg.outdir);
  const auto csv_path = fs::path(cfg.outdir) / "eval_report.csv";
  std::ofstream out(csv_path, std::ios::trunc);
  out << report.to_csv();
  if (!out) throw std::runtime_error("cannot write " + csv_path.string());
  std::cout << report.to_table() << "report written to " << csv_path.string() << "\n";
  return 0;
}

int cmd_synth(const mba::SynthConfig& cfg, const std::string& outdir) {
  const auto raw = mba::generate_raw(cfg);
  fs::create_directories(outdir);
  const auto dir = fs::path(outdir);
  mba::write_pairs_file((dir / "clicks.txt").string(), raw.clicks);
  mba::write_pairs_file((dir / "purchases.txt").string(), raw.purchases);
  mba::write_pairs_file((dir / "truth.txt").string(), raw.preferred);

  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  manifest << "clicks=clicks.txt\n"
           << "purchases=purchases.txt\n"
           << "split=" << cfg.split_ratio << "\n"
           << "seed=" << cfg.seed << "\n";
  if (!manifest) throw std::runtime_error("cannot write manifest in " + outdir);

  // sanity: the generated files must load into a usable dataset
  const auto ds = mba::build_split(raw.clicks, raw.purchases, cfg.split_ratio, cfg.seed);
  std::cout << "wrote " << raw.clicks.size() << " clicks, " << raw.purchases.size()
            << " purchases, " << raw.preferred.size() << " preferred pairs to " << outdir << "\n"
            << "dataset after filtering: " << ds.num_users() << " users, " << ds.num_items()
            << " items, " << ds.train_f.size() << " train / " << ds.test_f.size()
            << " test purchases\n";
  return 0;
}

int cmd_export(const RunConfig& cfg, const std::string& checkpoint,
               const std::string& users_csv, const std::string& out_path) {
  const auto ds = load_from_manifest(cfg);
  auto model = mba::load_checkpoint<float>(checkpoint);
  check_against_dataset(model, ds, "embedding checkpoint");

  std::vector<mba::UserId> users;
  std::stringstream list(users_csv);
  std::string tok;
  while (std::getline(list, tok, ',')) {
    if (tok.empty()) continue;
    const mba::RawId raw = std::stoll(tok);
    const auto dense = ds.users.find(raw);
    if (!dense) throw std::runtime_error("unknown user id: " + tok);
    users.push_back(*dense);
  }
  if (users.empty()) throw std::runtime_error("no users given; pass --users id1,id2,...");

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "item_id,tag";
  for (std::uint32_t k = 0; k < model.dim(); ++k) out << ",dim_" << k;
  out << "\n";
  out.precision(9);

  std::size_t rows = 0;
  for (std::size_t n = 0; n < users.size(); ++n) {
    auto emit = [&](const std::vector<mba::ItemId>& items, char kind) {
      for (mba::ItemId i : items) {
        out << ds.items.raw(i) << ",u" << (n + 1) << kind;
        for (const float v : model.item_emb.row(i)) out << ',' << v;
        out << "\n";
        ++rows;
      }
    };
    emit(ds.train_g.items_of(users[n]), 'c');
    emit(ds.train_f.items_of(users[n]), 'p');
  }
  if (!out) throw std::runtime_error("short write to " + out_path);
  std::cout << "wrote " << rows << " embedding rows to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-behavior alignment trainer for implicit-feedback recommendation"};
  app.require_subcommand(1);

  RunConfig pretrain_cfg;
  auto* pretrain = app.add_subcommand("pretrain", "pairwise-ranking pretraining of both behavior models");
  add_common_options(*pretrain, pretrain_cfg);

  RunConfig train_cfg;
  std::string pretrain_dir;
  bool alpha_grid = false, co_train = false, resume = false;
  auto* train = app.add_subcommand("train", "alignment training with alternating steps");
  add_common_options(*train, train_cfg);
  train->add_option("--pretrain-dir", pretrain_dir,
                    "directory holding pretrain_f.mba1 / pretrain_g.mba1 (default: outdir)");
  train->add_flag("--alpha-grid", alpha_grid, "sweep alpha over {1, 10, 100, 1000}, one outdir each");
  train->add_flag("--co-train-fg", co_train,
                  "ablation: skip pretraining and co-train the behavior models");
  train->add_flag("--resume", resume, "continue from train_state.bin if present");

  RunConfig eval_cfg;
  std::string checkpoint_dir, eval_pretrain_dir;
  auto* evaluate = app.add_subcommand("evaluate", "top-k report on the held-out purchases");
  add_common_options(*evaluate, eval_cfg);
  evaluate->add_option("--checkpoint-dir", checkpoint_dir,
                       "directory holding t_theta.mba1 (default: outdir)");
  evaluate->add_option("--pretrain-dir", eval_pretrain_dir,
                       "directory holding pretrain_f.mba1 (default: outdir)");

  mba::SynthConfig synth_cfg;
  std::string synth_outdir = "synth_data";
  auto* synth = app.add_subcommand("synth", "generate a synthetic two-behavior dataset");
  synth->add_option("--users", synth_cfg.num_users, "number of users");
  synth->add_option("--items", synth_cfg.num_items, "number of items");
  synth->add_option("--dim-true", synth_cfg.dim_true, "planted factor dimension");
  synth->add_option("--click-noise", synth_cfg.click_noise, "spurious click probability");
  synth->add_option("--exposure", synth_cfg.exposure, "preferred-pair exposure probability");
  synth->add_option("--purchase-rate", synth_cfg.purchase_rate, "conversion probability");
  synth->add_option("--split", synth_cfg.split_ratio, "test fraction of purchases");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--outdir", synth_outdir, "output directory");

  RunConfig export_cfg;
  std::string export_checkpoint, export_users, export_out = "embeddings.csv";
  auto* exporter = app.add_subcommand(
      "export-embeddings", "item embedding rows tagged by listed users' clicks and purchases");
  add_common_options(*exporter, export_cfg);
  exporter->add_option("--checkpoint", export_checkpoint, "model checkpoint to export from")
      ->required();
  exporter->add_option("--users", export_users, "comma-separated raw user ids")->required();
  exporter->add_option("--out", export_out, "output CSV path");

  try {
    auto args = apply_config_file(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());  // CLI11 consumes the vector back to front
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(pretrain_cfg);
    if (train->parsed()) return cmd_train(train_cfg, pretrain_dir, alpha_grid, co_train, resume);
    if (evaluate->parsed()) return cmd_evaluate(eval_cfg, checkpoint_dir, eval_pretrain_dir);
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_outdir);
    if (exporter->parsed()) return cmd_export(export_cfg, export_checkpoint, export_users, export_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
