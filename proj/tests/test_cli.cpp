#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli_lib.hpp"
#include "ndthash/model_io.hpp"

using namespace ndthash;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "ndthash_cli_test";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  return j;
}

std::string train_config(const fs::path& dir, const std::string& tag,
                         const std::string& extra) {
  const std::string csv = (dir / "moons.csv").string();
  std::ostringstream cfg;
  cfg << R"({
  "dataset": {"path": ")" << csv << R"(", "labels": "class"},
  "seed": 1001,
  "output": {"model": ")" << (dir / (tag + "_model.json")).string()
      << R"(", "history": ")" << (dir / (tag + "_hist.jsonl")).string()
      << R"(", "metrics": ")" << (dir / (tag + "_metrics.json")).string() << R"("},
)" << extra << R"(
}
)";
  const fs::path path = dir / (tag + ".json");
  write_file(path, cfg.str());
  return path.string();
}

}  // namespace

TEST_CASE("cli gen-data") {
  const fs::path dir = work_dir();
  const std::string out_a = (dir / "a.csv").string();
  const std::string out_b = (dir / "b.csv").string();

  SUBCASE("writes a summary and deterministic bytes") {
    const CliResult a = run({"gen-data", "two-moons", "--n", "50", "--noise",
                             "0.1", "--seed", "7", "--out", out_a});
    REQUIRE(a.exit_code == cli::kOk);
    CHECK(a.out.find("n=50") != std::string::npos);
    CHECK(a.out.find("classes=2") != std::string::npos);
    const CliResult b = run({"gen-data", "two-moons", "--n", "50", "--noise",
                             "0.1", "--seed", "7", "--out", out_b});
    REQUIRE(b.exit_code == cli::kOk);
    CHECK(slurp(out_a) == slurp(out_b));
  }
  SUBCASE("unknown kind exits 2 with a message") {
    const CliResult r = run({"gen-data", "spiral", "--out", out_a});
    CHECK(r.exit_code == cli::kUsageError);
    CHECK(r.err.find("unknown dataset kind") != std::string::npos);
  }
  SUBCASE("missing required option exits 2 with usage") {
    const CliResult r = run({"gen-data", "two-moons"});
    CHECK(r.exit_code == cli::kUsageError);
    CHECK(r.err.find("--out") != std::string::npos);
  }
}

TEST_CASE("cli train") {
  const fs::path dir = work_dir();
  REQUIRE(run({"gen-data", "two-moons", "--n", "80", "--noise", "0.1", "--seed",
               "7", "--out", (dir / "moons.csv").string()})
              .exit_code == cli::kOk);

  SUBCASE("hnn reports 9 parameters for dims [2,3]") {
    const std::string cfg = train_config(
        dir, "hnn",
        R"(  "dims": [2, 3],
  "train": {"loss": {"kind": "gini", "lambda_uniform": 0.1, "lambda_l2": 1e-4},
            "max_iters": 50, "rel_tol": 1e-10, "log_every": 10})");
    const CliResult r = run({"train", "hnn", cfg});
    REQUIRE(r.exit_code == cli::kOk);
    const auto metrics = read_json(dir / "hnn_metrics.json");
    CHECK(metrics["param_count"] == 9);
    CHECK(metrics["status"] == "ok");
    CHECK(metrics.contains("accuracy"));
    // model document round-trips
    const LoadedModel loaded = load_model((dir / "hnn_model.json").string());
    CHECK(std::holds_alternative<Network>(loaded.model));
    CHECK(loaded.table.has_value());
  }
  SUBCASE("mlp-baseline reports 13 parameters for dims [2,3,1]") {
    const std::string cfg = train_config(
        dir, "mlp",
        R"(  "dims": [2, 3, 1],
  "train": {"loss": {"kind": "gini"}, "max_iters": 30, "rel_tol": 1e-10})");
    const CliResult r = run({"train", "mlp-baseline", cfg});
    REQUIRE(r.exit_code == cli::kOk);
    CHECK(read_json(dir / "mlp_metrics.json")["param_count"] == 13);
  }
  SUBCASE("ndt model round-trips through load") {
    const std::string cfg = train_config(
        dir, "ndt",
        R"(  "tree": {"max_depth": 2, "fine_tune": false},
  "train": {"loss": {"kind": "gini"}, "learning_rate": 5.0, "momentum": 0.9,
            "max_iters": 60, "rel_tol": 1e-10})");
    const CliResult r = run({"train", "ndt", cfg});
    REQUIRE(r.exit_code == cli::kOk);
    const LoadedModel loaded = load_model((dir / "ndt_model.json").string());
    REQUIRE(loaded.is_tree());
    CHECK(std::get<NDTree>(loaded.model).leaf_count() ==
          read_json(dir / "ndt_metrics.json")["leaves"].get<std::size_t>());
  }
  SUBCASE("unknown config keys are rejected before any work") {
    const std::string cfg = train_config(
        dir, "bad",
        R"(  "dims": [2, 3],
  "surprise": 1,
  "train": {"loss": {"kind": "gini"}})");
    const CliResult r = run({"train", "hnn", cfg});
    CHECK(r.exit_code == cli::kUsageError);
    CHECK(r.err.find("surprise") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "bad_model.json"));
  }
  SUBCASE("unknown model kind exits 2") {
    const std::string cfg = train_config(dir, "k", R"(  "dims": [2, 3])");
    CHECK(run({"train", "boost", cfg}).exit_code == cli::kUsageError);
  }
  SUBCASE("divergence exits 3 and reports the last finite state") {
    const std::string cfg = train_config(
        dir, "div",
        R"(  "dims": [2, 2],
  "train": {"loss": {"kind": "gini", "lambda_l2": 1.0},
            "learning_rate": 1e12, "max_iters": 200, "rel_tol": 1e-15})");
    const CliResult r = run({"train", "hnn", cfg});
    CHECK(r.exit_code == cli::kDiverged);
    const auto metrics = read_json(dir / "div_metrics.json");
    CHECK(metrics["status"] == "diverged");
    CHECK(metrics.contains("last_finite"));
  }
}

TEST_CASE("cli eval") {
  const fs::path dir = work_dir();
  REQUIRE(run({"gen-data", "two-moons", "--n", "80", "--noise", "0.1", "--seed",
               "7", "--out", (dir / "moons.csv").string()})
              .exit_code == cli::kOk);
  const std::string cfg = train_config(
      dir, "ev",
      R"(  "dims": [2, 3],
  "train": {"loss": {"kind": "gini", "lambda_uniform": 0.1, "lambda_l2": 1e-4},
            "max_iters": 200, "rel_tol": 1e-10})");
  REQUIRE(run({"train", "hnn", cfg}).exit_code == cli::kOk);
  const std::string model = (dir / "ev_model.json").string();

  SUBCASE("accuracy on the training data matches the final history record") {
    const CliResult r =
        run({"eval", model, (dir / "moons.csv").string(), "--metrics",
             (dir / "em.json").string(), "--table", (dir / "et.csv").string()});
    REQUIRE(r.exit_code == cli::kOk);
    const double eval_acc = read_json(dir / "em.json")["accuracy"].get<double>();
    const double train_acc =
        read_json(dir / "ev_metrics.json")["accuracy"].get<double>();
    CHECK(eval_acc == train_acc);
    CHECK(slurp(dir / "et.csv").rfind("chain_bits,mass,p0,p1", 0) == 0);
  }
  SUBCASE("an empty CSV exits 2") {
    write_file(dir / "empty.csv", "");
    const CliResult r =
        run({"eval", model, (dir / "empty.csv").string(), "--metrics",
             (dir / "em.json").string(), "--table", (dir / "et.csv").string()});
    CHECK(r.exit_code == cli::kUsageError);
  }
  SUBCASE("label kind mismatch exits 2") {
    const CliResult r = run({"eval", model, (dir / "moons.csv").string(),
                             "--labels", "continuous:1", "--metrics",
                             (dir / "em.json").string(), "--table",
                             (dir / "et.csv").string()});
    CHECK(r.exit_code == cli::kUsageError);
    CHECK(r.err.find("mismatch") != std::string::npos);
  }
}

TEST_CASE("cli grid") {
  const fs::path dir = work_dir();
  REQUIRE(run({"gen-data", "two-moons", "--n", "80", "--noise", "0.1", "--seed",
               "7", "--out", (dir / "moons.csv").string()})
              .exit_code == cli::kOk);
  const std::string cfg = train_config(
      dir, "g",
      R"(  "dims": [2, 2],
  "train": {"loss": {"kind": "gini"}, "max_iters": 50, "rel_tol": 1e-10})");
  REQUIRE(run({"train", "hnn", cfg}).exit_code == cli::kOk);
  const std::string model = (dir / "g_model.json").string();

  SUBCASE("2x2 resolution gives 4 rows with region ids below 2^k") {
    const CliResult r = run({"grid", model, "--xmin", "-1", "--xmax", "2",
                             "--ymin", "-1", "--ymax", "1.5", "--nx", "2", "--ny",
                             "2", "--out", (dir / "grid.csv").string()});
    REQUIRE(r.exit_code == cli::kOk);
    std::istringstream lines(slurp(dir / "grid.csv"));
    std::string line;
    std::getline(lines, line);
    CHECK(line == "x,y,bits,region_id,prediction,membership_max");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      const std::size_t first = line.find(',');
      const std::size_t second = line.find(',', first + 1);
      const std::size_t third = line.find(',', second + 1);
      const std::size_t fourth = line.find(',', third + 1);
      const int region = std::stoi(line.substr(third + 1, fourth - third - 1));
      CHECK(region >= 0);
      CHECK(region < 4);
    }
    CHECK(rows == 4);
  }
  SUBCASE("non-2D models exit 2") {
    // 3-feature CSV: moons plus a copied label column as a third feature
    std::ostringstream csv;
    csv << "a,b,c,label\n";
    for (int i = 0; i < 8; ++i)
      csv << 0.1 * i << ',' << 0.2 * i << ',' << 0.3 * i << ',' << i % 2 << '\n';
    write_file(dir / "d3.csv", csv.str());
    std::ostringstream cfg3;
    cfg3 << R"({"dataset": {"path": ")" << (dir / "d3.csv").string()
         << R"(", "labels": "class"}, "seed": 3, "dims": [3, 2],
  "output": {"model": ")" << (dir / "m3.json").string() << R"(", "history": ")"
         << (dir / "h3.jsonl").string() << R"(", "metrics": ")"
         << (dir / "x3.json").string()
         << R"("}, "train": {"loss": {"kind": "gini"}, "max_iters": 5, "rel_tol": 1e-10}})";
    write_file(dir / "c3.json", cfg3.str());
    REQUIRE(run({"train", "hnn", (dir / "c3.json").string()}).exit_code == cli::kOk);
    const CliResult r = run({"grid", (dir / "m3.json").string(), "--out",
                             (dir / "g3.csv").string()});
    CHECK(r.exit_code == cli::kUsageError);
    CHECK(r.err.find("2D") != std::string::npos);
  }
}

TEST_CASE("cli gradcheck") {
  const fs::path dir = work_dir();
  std::ostringstream cfg;
  cfg << R"({"seed": 5, "h": 1e-5, "tolerance": 1e-5, "instances": 2, "output": ")"
      << (dir / "gc.json").string() << R"("})";
  write_file(dir / "gc_config.json", cfg.str());

  SUBCASE("default run passes and lists every loss kind exactly once") {
    const CliResult r = run({"gradcheck", (dir / "gc_config.json").string()});
    REQUIRE(r.exit_code == cli::kOk);
    const auto report = read_json(dir / "gc.json");
    CHECK(report["pass"] == true);
    REQUIRE(report["kinds"].size() == 6);
    std::set<std::string> kinds;
    for (const auto& k : report["kinds"]) {
      CHECK(k["max_rel_err"].get<double>() <= 1e-5);
      kinds.insert(k["kind"].get<std::string>());
    }
    CHECK(kinds.size() == 6);
  }
  SUBCASE("injected corruption fails with exit 1 naming the worst offender") {
    const CliResult r = run(
        {"gradcheck", (dir / "gc_config.json").string(), "--inject-corruption"});
    CHECK(r.exit_code == cli::kCheckFailed);
    CHECK(r.err.find("worst offender") != std::string::npos);
  }
}

TEST_CASE("cli invocations are deterministic") {
  const fs::path dir = work_dir();
  REQUIRE(run({"gen-data", "two-circles", "--n", "40", "--noise", "0", "--seed",
               "3", "--out", (dir / "moons.csv").string()})
              .exit_code == cli::kOk);
  // (file name kept as moons.csv so train_config can be reused)
  const std::string cfg = train_config(
      dir, "det",
      R"(  "dims": [2, 2],
  "train": {"loss": {"kind": "gini"}, "max_iters": 40, "rel_tol": 1e-10})");
  REQUIRE(run({"train", "hnn", cfg}).exit_code == cli::kOk);
  const std::string first_model = slurp(dir / "det_model.json");
  const std::string first_hist = slurp(dir / "det_hist.jsonl");
  const std::string first_metrics = slurp(dir / "det_metrics.json");
  REQUIRE(run({"train", "hnn", cfg}).exit_code == cli::kOk);
  CHECK(slurp(dir / "det_model.json") == first_model);
  CHECK(slurp(dir / "det_hist.jsonl") == first_hist);
  CHECK(slurp(dir / "det_metrics.json") == first_metrics);
}
