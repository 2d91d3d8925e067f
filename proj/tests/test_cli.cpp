#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cola/lidar_io.hpp"
#include "tiny_experiment.hpp"

using namespace cola;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cola_cli(const test::TempDir& dir, const std::string& args) {
  const fs::path out = dir.path() / "stdout.txt", err = dir.path() / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && '" COLA_CLI_PATH "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1") {
  test::TempDir dir("cli_usage");
  CHECK(cola_cli(dir, "").code == 1);
  CHECK(cola_cli(dir, "frobnicate").code == 1);
  CHECK(cola_cli(dir, "gen --out x").code == 1);
  CHECK(cola_cli(dir, "--help").code == 0);
  CHECK(cola_cli(dir, "report --help").code == 0);
}

TEST_CASE("gen, validate-map, remap and split") {
  test::TempDir dir("cli_flow");
  test::write_tiny_experiment(dir.path());
  const Run gen = cola_cli(dir, "gen --config corpus.cfg --out corpus --seed 4 --jobs 2");
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("tgt\t10 scenes\t20 scans") != std::string::npos);

  CHECK(cola_cli(dir, "validate-map --map maps/src_a.coarse8.csv --dataset corpus/src_a").code == 0);
  // A map for the wrong dataset leaves the source's ids uncovered.
  const Run wrong = cola_cli(dir, "validate-map --map maps/src_a.coarse8.csv --dataset corpus/src_b");
  CHECK(wrong.code == 2);
  CHECK(wrong.err.find("unmapped fine id 13") != std::string::npos);

  LabelArray labels;
  labels.semantic = {1, 4, 6, 0};
  labels.instance = {0, 2, 0, 0};
  write_file(dir.path() / "in.label", write_label_file(labels));
  REQUIRE(cola_cli(dir, "remap --map maps/src_a.coarse8.csv --labels in.label --out out.label").code == 0);
  const LabelArray coarse = load_labels(dir.path() / "out.label", 4);
  CHECK(coarse.semantic == std::vector<std::uint16_t>{1, 4, 8, 0});
  CHECK(coarse.instance == labels.instance);

  labels.semantic = {1, 42, 4, 0};
  write_file(dir.path() / "bad.label", write_label_file(labels));
  const Run bad = cola_cli(dir, "remap --map maps/src_a.coarse8.csv --labels bad.label --out bad_out.label");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("42") != std::string::npos);

  const Run split = cola_cli(dir, "split --dataset corpus/tgt --out splits --percent 50 --test-fraction 0.2");
  REQUIRE(split.code == 0);
  CHECK(split.out.find("test 2 scenes") != std::string::npos);
  CHECK(split.out.find("50% keeps 4 scenes") != std::string::npos);
  CHECK(fs::exists(dir.path() / "splits" / "train.tsv"));
  CHECK(index_dataset(dir.path() / "corpus" / "tgt", {LayoutKind::FlatManifest, (dir.path() / "splits" / "test.tsv").string()})
            .scenes.size() == 2);
  CHECK(cola_cli(dir, "split --dataset corpus/tgt --out splits --percent 30").code == 1);
}

TEST_CASE("pretrain, finetune, eval and export-features") {
  test::TempDir dir("cli_train");
  write_text_file(dir.path() / "exp.cfg", test::write_tiny_experiment(dir.path(), "scratch, cola"));
  const Run pre = cola_cli(dir, "pretrain --experiment exp.cfg --arm cola --seed 2 --quiet");
  REQUIRE(pre.code == 0);
  const fs::path ckpt = dir.path() / "out" / "checkpoints" / "cola_seed2.colaptk";
  CHECK(fs::exists(ckpt));
  CHECK(pre.err.empty());

  const Run fine = cola_cli(dir, "finetune --experiment exp.cfg --checkpoint out/checkpoints/cola_seed2.colaptk "
                                 "--percent 50 --seed 2 --quiet");
  REQUIRE(fine.code == 0);
  CHECK(fine.out.find("mIoU") != std::string::npos);
  const fs::path model = dir.path() / "out" / "model_tgt_50_seed2.colaptk";
  CHECK(fs::exists(model));

  const Run eval = cola_cli(dir, "eval --model out/model_tgt_50_seed2.colaptk --dataset out/corpus/tgt");
  CHECK(eval.code == 0);
  CHECK(eval.out.find("plants") != std::string::npos);

  const Run feats = cola_cli(dir, "export-features --model out/model_tgt_50_seed2.colaptk --dataset out/corpus/tgt "
                                  "--out feats.csv");
  REQUIRE(feats.code == 0);
  const std::string csv = slurp(dir.path() / "feats.csv");
  CHECK(csv.rfind("scene_id,scan_id,voxel,label,f0,f1,f2,f3,f4,f5,f6,f7\n", 0) == 0);

  CHECK(cola_cli(dir, "pretrain --experiment exp.cfg --arm scratch").code == 1);
  write_file(dir.path() / "junk.colaptk", Bytes{'n', 'o', 'p', 'e'});
  CHECK(cola_cli(dir, "finetune --experiment exp.cfg --checkpoint junk.colaptk --quiet").code == 2);
}

TEST_CASE("divergence exits 3") {
  test::TempDir dir("cli_diverge");
  std::string spec = test::write_tiny_experiment(dir.path(), "scratch");
  spec.replace(spec.rfind("lr = 0.05"), 9, "lr = 1e300");
  write_text_file(dir.path() / "exp.cfg", spec);
  const Run r = cola_cli(dir, "finetune --experiment exp.cfg --quiet");
  CHECK(r.code == 3);
  CHECK(r.err.find("Diverged") != std::string::npos);
}

}  // TEST_SUITE
