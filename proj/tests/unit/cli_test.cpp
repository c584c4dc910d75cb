#include <gtest/gtest.h>

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "temp_dir.hpp"
#include "vitforge/artifacts.hpp"
#include "vitforge/checkpoint.hpp"
#include "vitforge/dataset.hpp"
#include "vitforge/metrics.hpp"
#include "vitforge_cli/commands.hpp"

namespace vitforge {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result vitforge(std::vector<std::string> args) {
  args.insert(args.begin(), "vitforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

constexpr const char* kTinyConfig =
    "# 12x12 grey stripes, one encoder layer\n"
    "seed = 5\n"
    "vit.image_height = 12\n"
    "vit.image_width = 12\n"
    "vit.channels = 1\n"
    "vit.projection_dim = 8\n"
    "vit.num_layers = 1\n"
    "vit.num_heads = 2\n"
    "vit.encoder_mlp_dims = 16,8\n"
    "vit.head_dims = 16\n"
    "data.synthetic_per_class = 20\n"
    "augment.horizontal_flip = false\n"
    "train.batch_size = 16\n"
    "train.learning_rate = 0.001\n"
    "train.max_epochs = 3\n";

std::string write_config(const TempDir& dir, const std::string& text = kTinyConfig) {
  const auto path = dir / "run.cfg";
  std::ofstream(path) << text;
  return path.string();
}

std::vector<std::string> lines(const fs::path& file) {
  std::vector<std::string> out;
  std::ifstream in(file);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Checkpoints embed the run's output path, so runs in different
// directories are compared on their tensors.
std::vector<CheckpointTensor> tensors_of(const fs::path& file) { return load_checkpoint(file).tensors; }

std::map<std::string, fs::file_time_type> tree_listing(const fs::path& root) {
  std::map<std::string, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = e.last_write_time();
  return out;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(vitforge({}).code, 1);
  EXPECT_EQ(vitforge({"bogus"}).code, 1);
  EXPECT_EQ(vitforge({"train", "--no-such-flag"}).code, 1);
  EXPECT_EQ(vitforge({"--help"}).code, 0);
}

TEST(Cli, SplitOfThousandImageTree) {
  TempDir dir;
  const auto cfg = write_config(dir);
  const auto data = (dir / "data").string();
  ASSERT_EQ(vitforge({"gen-synthetic", "--config", cfg, "--per-class", "250", "--out", data}).code, 0);
  const auto before = tree_listing(data);

  const auto split_a = (dir / "split_a").string(), split_b = (dir / "split_b").string();
  const auto r = vitforge({"split", "--config", cfg, "--data", data, "--out", split_a});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(vitforge({"split", "--config", cfg, "--data", data, "--out", split_b}).code, 0);

  const auto train = lines(fs::path(split_a) / "train.idx");
  const auto val = lines(fs::path(split_a) / "val.idx");
  const auto test = lines(fs::path(split_a) / "test.idx");
  EXPECT_EQ(train.size(), 720u);
  EXPECT_EQ(val.size(), 80u);
  EXPECT_EQ(test.size(), 200u);
  for (const char* f : {"train.idx", "val.idx", "test.idx"}) {
    EXPECT_EQ(read_text_file(fs::path(split_a) / f), read_text_file(fs::path(split_b) / f)) << f;
  }

  std::multiset<std::string> listed;
  for (const auto* part : {&train, &val, &test}) listed.insert(part->begin(), part->end());
  std::multiset<std::string> on_disk;
  for (const auto& [rel, t] : before)
    if (rel.ends_with(".ppm")) on_disk.insert(rel);
  EXPECT_EQ(listed, on_disk);
  EXPECT_EQ(std::set<std::string>(listed.begin(), listed.end()).size(), listed.size());
  EXPECT_EQ(tree_listing(data), before);
}

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("vitforge-cli");
    config_ = write_config(*dir_);
    run_a_ = (*dir_ / "a").string();
    result_ = vitforge({"train", "--config", config_, "--out", run_a_});
  }
  static void TearDownTestSuite() { delete dir_; }

  static inline TempDir* dir_ = nullptr;
  static inline std::string config_;
  static inline std::string run_a_;
  static inline Result result_;
};

TEST_F(TrainedRun, WritesEveryArtifact) {
  ASSERT_EQ(result_.code, 0) << result_.err;
  for (const char* f : {"curves.csv", "curves.svg", "confusion.csv", "confusion.svg", "report.txt", "report.json",
                        "best.vitf", "last.vitf", "config.cfg", "train.idx", "val.idx", "test.idx"}) {
    EXPECT_TRUE(fs::exists(fs::path(run_a_) / f)) << f;
  }
  EXPECT_FALSE(fs::exists(fs::path(run_a_) / ".vitforge.lock"));
  const auto curves = lines(fs::path(run_a_) / "curves.csv");
  ASSERT_GE(curves.size(), 2u);
  EXPECT_LE(curves.size() - 1, 3u);
  EXPECT_EQ(curves[0], "epoch,train_loss,train_acc,val_loss,val_acc,val_precision_macro,val_recall_macro");
}

TEST_F(TrainedRun, RerunGivesIdenticalCurves) {
  const auto run_b = (*dir_ / "b").string();
  ASSERT_EQ(vitforge({"train", "--config", config_, "--out", run_b}).code, 0);
  EXPECT_EQ(read_text_file(fs::path(run_a_) / "curves.csv"), read_text_file(fs::path(run_b) / "curves.csv"));
  EXPECT_EQ(tensors_of(fs::path(run_a_) / "best.vitf"), tensors_of(fs::path(run_b) / "best.vitf"));
}

TEST_F(TrainedRun, ThreadCountDoesNotChangeCurves) {
  const auto run_c = (*dir_ / "c").string();
  ::setenv("VITFORGE_THREADS", "1", 1);
  const auto r = vitforge({"train", "--config", config_, "--out", run_c});
  ::unsetenv("VITFORGE_THREADS");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_text_file(fs::path(run_a_) / "curves.csv"), read_text_file(fs::path(run_c) / "curves.csv"));
}

TEST_F(TrainedRun, EvalIsRepeatableAndConsistent) {
  const auto best = (fs::path(run_a_) / "best.vitf").string();
  const auto e1 = (*dir_ / "e1").string(), e2 = (*dir_ / "e2").string();
  ASSERT_EQ(vitforge({"eval", "--checkpoint", best, "--out", e1}).code, 0);
  ASSERT_EQ(vitforge({"eval", "--checkpoint", best, "--out", e2}).code, 0);
  for (const char* f : {"confusion.csv", "report.txt", "confusion.svg", "report.json"}) {
    EXPECT_EQ(read_text_file(fs::path(e1) / f), read_text_file(fs::path(e2) / f)) << f;
  }

  const auto cm = parse_confusion_csv(read_text_file(fs::path(e1) / "confusion.csv"));
  std::map<std::string, std::uint64_t> support;
  for (const auto& rel : lines(fs::path(run_a_) / "test.idx")) ++support[rel.substr(0, rel.find('/'))];
  for (std::size_t k = 0; k < cm.num_classes(); ++k) EXPECT_EQ(cm.row_sum(k), support[cm.class_names()[k]]);

  const auto report = parse_report(read_text_file(fs::path(e1) / "report.json"));
  EXPECT_EQ(report.accuracy, static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
  EXPECT_EQ(read_text_file(fs::path(e1) / "confusion.csv"), read_text_file(fs::path(run_a_) / "confusion.csv"));
}

TEST_F(TrainedRun, PredictPrintsDistribution) {
  const auto best = (fs::path(run_a_) / "best.vitf").string();
  Image img(20, 30, 3, 0.4f);
  const auto path = (*dir_ / "odd.ppm").string();
  write_pnm(path, img);
  const auto r1 = vitforge({"predict", "--checkpoint", best, path});
  const auto r2 = vitforge({"predict", "--checkpoint", best, path});
  ASSERT_EQ(r1.code, 0) << r1.err;
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_NE(r1.err.find("resizing"), std::string::npos);
  std::istringstream in(r1.out);
  std::string line;
  std::getline(in, line);
  double total = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string name;
    double p = 0.0;
    cells >> name >> p;
    total += p;
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_EQ(vitforge({"predict", "--checkpoint", best, (*dir_ / "none.ppm").string()}).code, 3);
}

TEST_F(TrainedRun, ReportComparesRuns) {
  const auto r = vitforge({"report", run_a_, run_a_});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Precision"), std::string::npos);
  EXPECT_NE(r.out.find("Accuracy"), std::string::npos);
}

TEST_F(TrainedRun, ResumeExtendsRunLikeUninterruptedTraining) {
  const auto longer = (*dir_ / "long").string();
  ASSERT_EQ(vitforge({"train", "--config", config_, "--out", longer, "--set", "train.max_epochs=5"}).code, 0);
  const auto split_run = (*dir_ / "split_run").string();
  fs::create_directories(split_run);
  fs::copy(fs::path(run_a_), split_run, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const auto r = vitforge({"train", "--config", config_, "--out", split_run, "--resume", "--set", "train.max_epochs=5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(fs::path(longer) / "curves.csv"), read_text_file(fs::path(split_run) / "curves.csv"));
  EXPECT_EQ(tensors_of(fs::path(longer) / "last.vitf"), tensors_of(fs::path(split_run) / "last.vitf"));

  const auto changed = vitforge({"train", "--config", config_, "--out", split_run, "--resume", "--set",
                                 "train.learning_rate=0.5", "--set", "train.max_epochs=6"});
  EXPECT_EQ(changed.code, 2);
  EXPECT_NE(changed.err.find("train.learning_rate"), std::string::npos);
}

TEST_F(TrainedRun, CheckpointSaveLoadSaveIsByteIdentical) {
  const auto best = fs::path(run_a_) / "best.vitf";
  const auto copy = *dir_ / "copy.vitf";
  save_checkpoint(copy, load_checkpoint(best));
  EXPECT_EQ(read_text_file(best), read_text_file(copy));
}

TEST_F(TrainedRun, DamagedCheckpointsFailWithCheckpointCode) {
  const auto bytes = read_text_file(fs::path(run_a_) / "best.vitf");
  const auto cut = *dir_ / "cut.vitf";
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 1);
  const auto r = vitforge({"eval", "--checkpoint", cut.string(), "--out", (*dir_ / "x").string()});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("truncated"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(*dir_ / "x" / "confusion.csv"));
  std::string bad = bytes;
  bad[0] = 'Z';
  std::ofstream(*dir_ / "magic.vitf", std::ios::binary) << bad;
  EXPECT_EQ(vitforge({"predict", "--checkpoint", (*dir_ / "magic.vitf").string(), "x.ppm"}).code, 5);
}

TEST(Cli, ConfigErrorNamesKeyAndLine) {
  TempDir dir;
  const auto cfg = write_config(dir, "seed = 1\nvit.patch_sise = 6\n");
  const auto r = vitforge({"train", "--config", cfg, "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("vit.patch_sise"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_EQ(vitforge({"train", "--config", (dir / "missing.cfg").string()}).code, 2);
}

TEST(Cli, DataErrorsUseDataCode) {
  TempDir dir;
  const auto cfg = write_config(dir);
  fs::create_directories(dir / "empty_root");
  const auto r = vitforge({"split", "--config", cfg, "--data", (dir / "empty_root").string(), "--out",
                           (dir / "s").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, BusyOutputDirectoryIsRejected) {
  TempDir dir;
  const auto cfg = write_config(dir);
  const auto out = dir / "run";
  fs::create_directories(out);
  std::ofstream(out / ".vitforge.lock") << ::getpid() << "\n";
  const auto r = vitforge({"split", "--config", cfg, "--out", out.string()});
  EXPECT_EQ(r.code, 6);
  EXPECT_TRUE(fs::exists(out / ".vitforge.lock"));
  // A lock whose owner is gone is taken over.
  std::ofstream(out / ".vitforge.lock") << 999999999 << "\n";
  EXPECT_EQ(vitforge({"split", "--config", cfg, "--out", out.string()}).code, 0);
}

TEST(Cli, PredictRecognisesMemorisedClass) {
  TempDir dir;
  const auto cfg = write_config(dir, std::string(kTinyConfig) +
                                         "data.synthetic_per_class = 12\n"
                                         "augment.enabled = false\n"
                                         "vit.dropout_rate = 0\n"
                                         "vit.head_dropout_rate = 0\n"
                                         "train.batch_size = 8\n"
                                         "train.learning_rate = 0.01\n"
                                         "train.max_epochs = 150\n"
                                         "train.early_stop_patience = 150\n");
  const auto data = (dir / "data").string();
  ASSERT_EQ(vitforge({"gen-synthetic", "--config", cfg, "--out", data}).code, 0);
  const auto run = (dir / "run").string();
  const auto t = vitforge({"train", "--config", cfg, "--data", data, "--out", run});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto history = parse_curves_csv(read_text_file(fs::path(run) / "curves.csv"));
  ASSERT_EQ(history.size(), 150u);
  std::map<std::string, std::string> first_of_class;
  for (const auto& rel : lines(fs::path(run) / "train.idx")) first_of_class.emplace(rel.substr(0, rel.find('/')), rel);
  ASSERT_EQ(first_of_class.size(), 4u);
  for (const auto& [cls, rel] : first_of_class) {
    const auto r = vitforge({"predict", "--checkpoint", (fs::path(run) / "last.vitf").string(),
                             (fs::path(data) / rel).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), (fs::path(data) / rel).string() + ": " + cls);
  }
}

}  // namespace
}  // namespace vitforge
