#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pse/checkpoint.hpp"
#include "pse/cloud_io.hpp"
#include "pse/config.hpp"
#include "pse/dataset.hpp"
#include "pse/embedder.hpp"
#include "pse/geometry.hpp"
#include "pse/losses.hpp"
#include "pse/restorer.hpp"
#include "pse/training.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pse::data_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> cloud_files_in(const std::string& dir) {
  if (!fs::is_directory(dir)) throw pse::data_error(dir + " is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".xyz" || ext == ".ply") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw pse::data_error("no .xyz/.ply files in " + dir);
  return files;
}

std::vector<pse::PointCloud> load_dataset(const std::string& dir) {
  std::vector<pse::PointCloud> clouds;
  for (const auto& f : cloud_files_in(dir)) clouds.push_back(pse::parse_cloud(f));
  return clouds;
}

struct GenDataArgs {
  std::string spec_path, out_dir;
  std::int64_t seed = -1;
};

int run_gen_data(const GenDataArgs& args) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(args.spec_path));
  } catch (const nlohmann::json::exception& e) {
    throw pse::data_error(args.spec_path + ": invalid JSON: " + e.what());
  }
  pse::ToyDatasetSpec spec = pse::dataset_from_json(j);
  if (args.seed >= 0) spec.seed = static_cast<std::uint64_t>(args.seed);

  std::vector<pse::PointCloud> clouds = pse::make_toy_dataset(spec);
  fs::create_directories(args.out_dir);
  std::ofstream copy(fs::path(args.out_dir) / "dataset.json");
  copy << pse::dataset_to_json(spec).dump(2) << "\n";

  std::size_t index = 0;
  for (const auto& family : spec.families)
    for (std::size_t i = 0; i < spec.per_family; ++i, ++index) {
      char name[64];
      std::snprintf(name, sizeof(name), "shape_%05zu_%s.xyz", index,
                    pse::canonical_family(family).c_str());
      pse::write_cloud((fs::path(args.out_dir) / name).string(), clouds[index]);
    }
  std::cout << "wrote " << clouds.size() << " clouds to " << args.out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path, data_dir, out_path, log_path;
  std::int64_t seed = -1;
};

int run_train(const TrainArgs& args) {
  pse::TrainConfig cfg = pse::config_from_string(slurp(args.config_path));
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  cfg.validate();

  std::vector<pse::PointCloud> dataset = load_dataset(args.data_dir);
  std::cerr << "training on " << dataset.size() << " clouds, " << cfg.epochs
            << " epochs\n";
  pse::TrainResult result = pse::train(cfg, dataset);
  pse::save_checkpoint(args.out_path, result.checkpoint);
  if (!args.log_path.empty()) pse::write_training_log(args.log_path, result.log);

  if (!result.log.empty()) {
    const pse::EpochLog& last = result.log.back();
    std::cout << "final epoch " << last.epoch << ": total=" << last.total
              << " shape=" << last.shape << " dist=" << last.dist
              << " conform=" << last.conform << "\n";
  }
  std::cout << "checkpoint written to " << args.out_path << "\n";
  return 0;
}

struct EmbedArgs {
  std::string ckpt, in_path, out_path, offsets_path;
};

int run_embed(const EmbedArgs& args) {
  pse::CheckpointData ckpt = pse::load_checkpoint(args.ckpt);
  pse::PointCloud cloud = pse::parse_cloud(args.in_path);

  // Pad to the next multiple of r by duplicating farthest-point-selected
  // points; the pad count rides along in the output file so restoration can
  // drop the synthetic rows again.
  const std::size_t r = ckpt.config.r;
  const std::size_t rem = cloud.count() % r;
  const std::size_t pad = rem == 0 ? 0 : r - rem;
  if (pad > 0) {
    auto idx = pse::farthest_point_sample(cloud, pad);
    for (std::uint32_t i : idx) cloud.pts.push_back(cloud[i]);
    std::cerr << "padded input with " << pad << " duplicated points\n";
  }

  pse::EmbedResult er = pse::embed(ckpt.params, cloud, ckpt.config);
  pse::write_cloud(args.out_path, er.Q, pad);
  if (!args.offsets_path.empty()) pse::write_offsets_csv(args.offsets_path, er.delta_Q);
  std::cout << "embedded " << cloud.count() << " -> " << er.Q.count() << " points\n";
  return 0;
}

struct RestoreArgs {
  std::string ckpt, in_path, out_path;
  std::size_t patch_size = 2048;
  bool no_patch = false;
};

int run_restore(const RestoreArgs& args) {
  pse::CheckpointData ckpt = pse::load_checkpoint(args.ckpt);
  pse::CloudFileData in = pse::parse_cloud_file(args.in_path);
  if (args.patch_size == 0) throw pse::config_error("patch size must be positive");

  pse::PointCloud out;
  if (!args.no_patch && in.cloud.count() > args.patch_size) {
    auto [patches, layout] = pse::split_patches(in.cloud, args.patch_size);
    std::vector<pse::PointCloud> restored;
    restored.reserve(patches.size());
    for (const auto& patch : patches)
      restored.push_back(pse::restore(ckpt.params, patch, ckpt.config).R);
    out = pse::merge_patches(restored, layout);
    std::cerr << "restored " << patches.size() << " patches\n";
  } else {
    out = pse::restore(ckpt.params, in.cloud, ckpt.config).R;
    if (in.pad > 0 && in.pad < out.count()) {
      out.pts.resize(out.count() - in.pad);
      std::cerr << "dropped " << in.pad << " padded rows\n";
    }
  }
  pse::write_cloud(args.out_path, out);
  std::cout << "restored " << in.cloud.count() << " -> " << out.count() << " points\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data_dir, report_path;
};

int run_eval(const EvalArgs& args) {
  pse::CheckpointData ckpt = pse::load_checkpoint(args.ckpt);
  std::vector<pse::PointCloud> dataset = load_dataset(args.data_dir);
  pse::EvalReport report = pse::evaluate(ckpt.params, ckpt.config, dataset);
  pse::write_eval_csv(args.report_path, report);
  std::cout << "shapes=" << report.shapes.size() << " mean_cd=" << report.mean_cd
            << " mean_hd=" << report.mean_hd << " mean_emd=" << report.mean_emd
            << " baseline_cd=" << report.mean_cd_baseline << "\n";
  return 0;
}

struct SampleArgs {
  std::string in_path, out_path;
  std::size_t n = 0;
};

int run_sample(const SampleArgs& args) {
  pse::PointCloud cloud = pse::parse_cloud(args.in_path);
  auto idx = pse::farthest_point_sample(cloud, args.n);
  pse::write_cloud(args.out_path, pse::gather_points(cloud, idx));
  std::cout << "sampled " << args.n << " of " << cloud.count() << " points\n";
  return 0;
}

struct PerturbArgs {
  std::string ckpt, in_path, report_path;
  std::uint64_t seed = 0;
};

int run_perturb(const PerturbArgs& args) {
  pse::CheckpointData ckpt = pse::load_checkpoint(args.ckpt);
  pse::PointCloud P = pse::parse_cloud(args.in_path);

  pse::EmbedResult er = pse::embed(ckpt.params, P, ckpt.config);
  pse::PointCloud plain = pse::restore(ckpt.params, er.Q, ckpt.config).R;

  pse::Rng rng(args.seed);
  pse::PointCloud shuffled_q = pse::perturb_embedding(er, rng);
  pse::PointCloud perturbed = pse::restore(ckpt.params, shuffled_q, ckpt.config).R;

  const double cd_plain = pse::chamfer(P, plain);
  const double cd_perturbed = pse::chamfer(P, perturbed);

  std::ofstream os(args.report_path);
  if (!os) throw pse::data_error("cannot write " + args.report_path);
  os << "cd_unperturbed,cd_perturbed\n"
     << pse::csv_fixed(cd_plain) << ',' << pse::csv_fixed(cd_perturbed) << "\n";
  std::cout << "cd_unperturbed=" << cd_plain << " cd_perturbed=" << cd_perturbed << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point set self-embedding tool"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a procedural toy dataset");
  c_gen->add_option("--spec", gen.spec_path, "dataset spec JSON")->required();
  c_gen->add_option("--out", gen.out_dir, "output directory")->required();
  c_gen->add_option("--seed", gen.seed, "override the spec seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train embedder and restorer");
  c_train->add_option("--config", tr.config_path, "training config JSON")->required();
  c_train->add_option("--data", tr.data_dir, "directory of training clouds")->required();
  c_train->add_option("--out", tr.out_path, "output checkpoint path")->required();
  c_train->add_option("--log", tr.log_path, "per-epoch training log CSV");
  c_train->add_option("--seed", tr.seed, "override the config seed");

  EmbedArgs em;
  auto* c_embed = app.add_subcommand("embed", "embed a cloud into its sparse form");
  c_embed->add_option("--ckpt", em.ckpt, "checkpoint")->required();
  c_embed->add_option("--in", em.in_path, "input cloud")->required();
  c_embed->add_option("--out", em.out_path, "output cloud")->required();
  c_embed->add_option("--export-offsets", em.offsets_path, "write offsets CSV");

  RestoreArgs re;
  auto* c_restore = app.add_subcommand("restore", "restore a dense cloud");
  c_restore->add_option("--ckpt", re.ckpt, "checkpoint")->required();
  c_restore->add_option("--in", re.in_path, "embedded cloud")->required();
  c_restore->add_option("--out", re.out_path, "output cloud")->required();
  c_restore->add_option("--patch-size", re.patch_size, "split threshold (default 2048)");
  c_restore->add_flag("--no-patch", re.no_patch, "disable patch splitting");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  c_eval->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  c_eval->add_option("--data", ev.data_dir, "directory of clouds")->required();
  c_eval->add_option("--report", ev.report_path, "output report CSV")->required();

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample", "farthest point sampling baseline");
  c_sample->add_option("--in", sa.in_path, "input cloud")->required();
  c_sample->add_option("--n", sa.n, "points to keep")->required();
  c_sample->add_option("--out", sa.out_path, "output cloud")->required();

  PerturbArgs pe;
  auto* c_perturb = app.add_subcommand("perturb", "offset permutation experiment");
  c_perturb->add_option("--ckpt", pe.ckpt, "checkpoint")->required();
  c_perturb->add_option("--in", pe.in_path, "input cloud")->required();
  c_perturb->add_option("--seed", pe.seed, "permutation seed (default 0)");
  c_perturb->add_option("--report", pe.report_path, "output report CSV")->required();

  try {
    app.parse(argc, argv);
    if (c_gen->parsed()) return run_gen_data(gen);
    if (c_train->parsed()) return run_train(tr);
    if (c_embed->parsed()) return run_embed(em);
    if (c_restore->parsed()) return run_restore(re);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_sample->parsed()) return run_sample(sa);
    if (c_perturb->parsed()) return run_perturb(pe);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const pse::data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
