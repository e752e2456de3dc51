#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "coevo/driver.hpp"
#include "coevo/io.hpp"
#include "coevo/plots.hpp"

namespace fs = std::filesystem;
using namespace coevo;

namespace {

TrainConfig config_or_default(const std::string& path) {
  TrainConfig c = path.empty() ? config_from_json(Json::object()) : load_config(path);
  apply_env_overrides(c);
  validate(c);
  return c;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t e = s.find(',', pos);
    if (e == std::string::npos) e = s.size();
    if (e > pos) out.push_back(s.substr(pos, e - pos));
    pos = e + 1;
  }
  return out;
}

Json last_probe(const fs::path& metrics) {
  Json out = Json::object();
  for (const auto& r : read_metrics(metrics)) {
    if (r.kind != "shift_probe") continue;
    out = Json::object();
    out["step"] = r.step;
    for (const auto& [k, v] : r.values) out[k] = v;
  }
  return out;
}

// Shares one tokenizer and one SFT checkpoint across several variants.
Json run_variants(const TrainConfig& base, const std::vector<std::pair<std::string, TrainConfig>>& variants,
                  const fs::path& root) {
  fs::create_directories(root);
  TrainConfig shared = base;
  shared.paths.out_dir = (root / "shared").string();
  const std::string hash = config_hash(shared);
  const auto data = make_dataset(shared);
  Tokenizer tok = pretrain_stage(shared, data);
  save_checkpoint(tokenizer_checkpoint(tok, hash), root / "tokenizer.ckpt");
  ParamBundle sft;
  {
    Environment env(shared, tok);
    sft = sft_stage(shared, env);
  }
  Checkpoint sc;
  sc.config_hash = hash;
  sc.bundles["policy"] = sft;
  save_checkpoint(sc, root / "sft.ckpt");

  Json summary = Json::object();
  for (const auto& [name, cfg] : variants) {
    TrainConfig c = cfg;
    c.paths.out_dir = (root / name).string();
    const RunArtifacts art = train(c, {root / "tokenizer.ckpt", root / "sft.ckpt"});
    summary[name] = last_probe(art.metrics);
    std::cerr << name << ": " << summary[name].dump() << '\n';
  }
  std::ofstream(root / "summary.json") << summary.dump(2) << '\n';
  return summary;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coevo: desk-scale policy/decoder co-evolution"};
  app.require_subcommand(1);
  std::string config_path, out_path, tokenizer_path, sft_path, checkpoint_path, dtype = "float64";

  auto* tok_cmd = app.add_subcommand("tokenizer-pretrain", "pretrain the VQ tokenizer");
  tok_cmd->add_option("--config", config_path, "run config (JSON)");
  tok_cmd->add_option("--out", out_path, "output checkpoint")->required();
  tok_cmd->add_option("--dtype", dtype, "payload dtype: float64|float32");

  auto* sft_cmd = app.add_subcommand("sft", "supervised pretraining of the policy");
  sft_cmd->add_option("--config", config_path, "run config (JSON)");
  sft_cmd->add_option("--tokenizer", tokenizer_path, "tokenizer checkpoint")->required();
  sft_cmd->add_option("--out", out_path, "output checkpoint")->required();
  sft_cmd->add_option("--dtype", dtype, "payload dtype: float64|float32");

  auto* train_cmd = app.add_subcommand("train", "full pipeline: tokenizer, SFT, post-training");
  train_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  train_cmd->add_option("--tokenizer", tokenizer_path, "reuse a tokenizer checkpoint");
  train_cmd->add_option("--sft", sft_path, "reuse an SFT checkpoint");

  auto* probe_cmd = app.add_subcommand("probe", "shift and quality probes of a checkpoint");
  probe_cmd->add_option("--config", config_path, "run config (JSON)");
  probe_cmd->add_option("--tokenizer", tokenizer_path, "tokenizer checkpoint")->required();
  probe_cmd->add_option("--checkpoint", checkpoint_path, "training checkpoint")->required();

  std::string modes = "sft,policy_only,decoder_only,full";
  auto* ablate_cmd = app.add_subcommand("ablate", "training-mode ablation");
  ablate_cmd->add_option("--config", config_path, "run config (JSON)");
  ablate_cmd->add_option("--modes", modes, "comma-separated modes");

  std::string zero;
  auto* losses_cmd = app.add_subcommand("ablate-losses", "decoder-loss ablation by zeroing weights");
  losses_cmd->add_option("--config", config_path, "run config (JSON)");
  losses_cmd->add_option("--zero", zero, "terms to zero, comma-separated from r,g,c,d")->required();

  std::vector<std::string> metrics_files;
  std::string plot_out = "plots";
  auto* plot_cmd = app.add_subcommand("plot", "CSV and SVG charts from metrics files");
  plot_cmd->add_option("--metrics", metrics_files, "metrics JSONL, optionally label=path")->required();
  plot_cmd->add_option("--out", plot_out, "output directory");

  const std::string command = argc > 1 ? argv[1] : "";
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      throw std::invalid_argument(e.what());
    }

    if (*tok_cmd) {
      const TrainConfig c = config_or_default(config_path);
      const Tokenizer tok = pretrain_stage(c, make_dataset(c));
      save_checkpoint(tokenizer_checkpoint(tok, config_hash(c)), out_path, parse_dtype(dtype));
      Json out;
      out["reconstruction_l1"] = reconstruction_l1(make_dataset(c), tok);
      std::cout << out.dump() << '\n';
    } else if (*sft_cmd) {
      const TrainConfig c = config_or_default(config_path);
      Environment env(c, tokenizer_from(load_checkpoint(tokenizer_path)));
      Checkpoint ck;
      ck.config_hash = config_hash(c);
      ck.bundles["policy"] = sft_stage(c, env);
      save_checkpoint(ck, out_path, parse_dtype(dtype));
      Json out;
      out["per_token_cross_entropy"] =
          per_token_cross_entropy(ck.bundles["policy"], env.prompt_ids(), env.gt_tokens());
      std::cout << out.dump() << '\n';
    } else if (*train_cmd) {
      const TrainConfig c = config_or_default(config_path);
      PipelineInputs in;
      if (!tokenizer_path.empty()) in.tokenizer_checkpoint = tokenizer_path;
      if (!sft_path.empty()) in.sft_checkpoint = sft_path;
      const RunArtifacts art = train(c, in);
      Json out = last_probe(art.metrics);
      out["final_checkpoint"] = art.final_checkpoint.string();
      std::cout << out.dump() << '\n';
    } else if (*probe_cmd) {
      const TrainConfig c = config_or_default(config_path);
      Environment env(c, tokenizer_from(load_checkpoint(tokenizer_path)));
      const Checkpoint ck = load_checkpoint(checkpoint_path);
      TrainState s = init_state(c, env, ck.bundles.count("policy") ? ck.bundles.at("policy")
                                                                  : throw std::runtime_error("checkpoint lacks 'policy'"));
      if (ck.bundles.count("decoder")) restore_state(s, ck, c);
      Json out = Json::object();
      out["step"] = s.step;
      for (const auto& [k, v] : probe(s, env, c)) out[k] = v;
      out["config_hash_mismatch"] = ck.config_hash != config_hash(c);
      std::cout << out.dump() << '\n';
    } else if (*ablate_cmd) {
      const TrainConfig c = config_or_default(config_path);
      std::vector<std::pair<std::string, TrainConfig>> variants;
      for (const auto& m : split(modes)) {
        TrainConfig v = c;
        v.driver.mode = parse_train_mode(m);
        variants.emplace_back(m, v);
      }
      if (variants.empty()) throw std::invalid_argument("--modes: no modes given");
      std::cout << run_variants(c, variants, fs::path(c.paths.out_dir) / "ablate").dump() << '\n';
    } else if (*losses_cmd) {
      const TrainConfig c = config_or_default(config_path);
      TrainConfig v = c;
      v.driver.mode = TrainMode::kFull;
      for (const auto& t : split(zero)) {
        if (t == "r") v.stage2.lambda_r = 0.0;
        else if (t == "g") v.stage2.lambda_g = 0.0;
        else if (t == "c") v.stage2.lambda_c = 0.0;
        else if (t == "d") v.stage2.lambda_d = 0.0;
        else throw std::invalid_argument("--zero: unknown term '" + t + "' (expected r|g|c|d)");
      }
      validate(v);
      TrainConfig full = c;
      full.driver.mode = TrainMode::kFull;
      std::cout << run_variants(c, {{"full", full}, {"zero_" + zero, v}},
                                fs::path(c.paths.out_dir) / "ablate_losses")
                       .dump()
                << '\n';
    } else if (*plot_cmd) {
      std::vector<PlotInput> inputs;
      for (const auto& m : metrics_files) {
        const auto eq = m.find('=');
        if (eq == std::string::npos) {
          inputs.push_back({fs::path(m).parent_path().filename().string().empty()
                                ? fs::path(m).stem().string()
                                : fs::path(m).parent_path().filename().string(),
                            m});
        } else {
          inputs.push_back({m.substr(0, eq), m.substr(eq + 1)});
        }
      }
      const auto files = emit_plots(inputs, plot_out);
      Json out;
      out["files"] = files.size();
      out["out_dir"] = plot_out;
      std::cout << out.dump() << '\n';
    }
  } catch (const std::exception& e) {
    Json err;
    err["error"] = e.what();
    err["command"] = command;
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
