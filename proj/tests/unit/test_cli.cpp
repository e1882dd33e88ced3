#include <doctest.h>

#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "t2t/image_io.hpp"

using namespace t2t;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args, const std::optional<std::string>& env = std::nullopt) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err, env);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("t2t_cli_" + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json without_clock(const fs::path& p) {
    json j = json::parse(slurp(p));
    CHECK(j.contains("wall_clock_seconds"));
    j.erase("wall_clock_seconds");
    return j;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p);
    f << s;
}

class FixedDetector : public DetectionClient {
public:
    explicit FixedDetector(std::vector<DetectionBox> boxes) : boxes_(std::move(boxes)) {}
    std::vector<DetectionBox> detect(const Image&, const std::vector<std::string>&) override { return boxes_; }

private:
    std::vector<DetectionBox> boxes_;
};

}  // namespace

TEST_CASE("cli usage errors exit 2") {
    auto r = run({});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(run({"--bogus"}).code == 2);
    CHECK(run({"selfcheck", "--bogus"}).code == 2);
    CHECK(run({"corpus"}).code == 2);
    CHECK(run({"corpus", "generate", "--n", "3"}).code == 2);
    CHECK(run({"train", "--stage", "3", "--manifest", "x", "--out-dir", "y"}).code == 2);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("cli selfcheck passes") {
    const auto r = run({"selfcheck", "--nms-sets", "100", "--frechet-pairs", "10"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("PASS nms_vs_brute_force") != std::string::npos);
}

TEST_CASE("seed precedence") {
    CHECK(cli::resolve_seed(3, 4, "5") == 3);
    CHECK(cli::resolve_seed(std::nullopt, 4, "5") == 4);
    CHECK(cli::resolve_seed(std::nullopt, std::nullopt, "5") == 5);
    CHECK(cli::resolve_seed(std::nullopt, std::nullopt, std::nullopt, 9) == 9);
    CHECK_THROWS_AS(cli::resolve_seed(std::nullopt, std::nullopt, "x1"), cli::UsageError);
    CHECK_THROWS_AS(cli::resolve_seed(std::nullopt, std::nullopt, "-1"), cli::UsageError);
}

TEST_CASE("train config precedence: flags over file over defaults") {
    const auto d = cli::resolve_train_config(std::nullopt, {}, {}, std::nullopt);
    CHECK(d == TrainConfig::defaults_for_stage(1));

    const std::map<std::string, std::string> file = {{"epochs", "7"}, {"batch_size", "4"}, {"seed", "11"}};
    const auto f = cli::resolve_train_config(1, file, {}, "99");
    CHECK(f.epochs == 7);
    CHECK(f.batch_size == 4);
    CHECK(f.seed == 11);
    CHECK(f.learning_rate == TrainConfig{}.learning_rate);

    const auto g = cli::resolve_train_config(1, file, {{"epochs", "2"}, {"seed", "12"}}, "99");
    CHECK(g.epochs == 2);
    CHECK(g.batch_size == 4);
    CHECK(g.seed == 12);

    CHECK(cli::resolve_train_config(1, {{"epochs", "3"}}, {}, "99").seed == 99);

    // The stage picks the defaults layer; the flag beats the file.
    const auto s2 = cli::resolve_train_config(std::nullopt, {{"stage", "2"}, {"init_checkpoint", "a.ckpt"}}, {},
                                              std::nullopt);
    CHECK(s2.stage == 2);
    CHECK(s2.weighted_loss);
    CHECK(s2.epochs == TrainConfig::defaults_for_stage(2).epochs);
    const auto s1 = cli::resolve_train_config(1, {{"stage", "2"}}, {}, std::nullopt);
    CHECK(s1.stage == 1);
    CHECK_FALSE(s1.weighted_loss);
    CHECK_THROWS(cli::resolve_train_config(1, {{"no_such_key", "1"}}, {}, std::nullopt));
}

TEST_CASE("bbox flag parsing") {
    CHECK(cli::parse_bbox("1,2,30,40") == Rect{1, 2, 30, 40});
    CHECK_THROWS_AS(cli::parse_bbox("1,2,3"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_bbox("1,2,3,x"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_bbox("5,5,5,9"), cli::UsageError);
}

TEST_CASE("recaption with permissive filters reproduces the corpus annotations") {
    const auto rec = generate_record(21, 0, CorpusConfig{});
    const auto entry = to_manifest_entry(rec, "x.png", "train");
    REQUIRE(!entry.objects.empty());
    const auto same = cli::recaption(entry, rec.image, {1.0, 0, 0, true}, nullptr, std::nullopt);
    CHECK(same == entry);

    FixedDetector unknown({{{0, 0, 10, 10}, "zeppelin", 0.9}});
    CHECK_THROWS_AS(cli::recaption(entry, rec.image, {}, &unknown, std::nullopt), IngestionError);

    const Rect b = entry.objects[0].bbox;
    FixedDetector one({{b, to_string(entry.objects[0].class_name), 0.9}});
    const auto det = cli::recaption(entry, rec.image, {0.5, 0, 0, true}, &one, std::nullopt);
    REQUIRE(det.objects.size() == 1);
    CHECK(det.objects[0] == entry.objects[0]);
    CHECK(det.global_caption == entry.global_caption);
}

TEST_CASE("cli pipeline end to end") {
    TempDir dir("pipeline");
    REQUIRE(run({"corpus", "generate", "--n", "12", "--seed", "4", "--out-dir", dir / "c", "--val-fraction", "0.25"})
                .code == 0);
    const auto m1 = slurp(dir / "c/manifest.jsonl");
    const auto rm1 = without_clock(dir / "c/run_manifest.json");
    REQUIRE(run({"corpus", "generate", "--n", "12", "--seed", "4", "--out-dir", dir / "c", "--val-fraction", "0.25"})
                .code == 0);
    CHECK(slurp(dir / "c/manifest.jsonl") == m1);
    CHECK(without_clock(dir / "c/run_manifest.json") == rm1);
    const auto entries = read_manifest(dir / "c/manifest.jsonl");
    REQUIRE(entries.size() == 12);
    CHECK(entries[8].split == "train");
    CHECK(entries[9].split == "val");

    // The environment seed applies when no flag is given.
    REQUIRE(run({"corpus", "generate", "--n", "2", "--out-dir", dir / "env"}, "4").code == 0);
    CHECK(read_manifest(dir / "env/manifest.jsonl")[0] == entries[0]);

    REQUIRE(run({"caption", "build", "--manifest", dir / "c/manifest.jsonl", "--out", dir / "cap/m.jsonl"}).code == 0);
    CHECK(slurp(dir / "c/manifest.jsonl") == m1);
    const auto recap = read_manifest(dir / "cap/m.jsonl");
    REQUIRE(recap.size() == 12);
    CHECK(fs::exists(fs::path(dir / "cap") / recap[0].image_path));
    CHECK(fs::exists(dir / "cap/m.jsonl.run.json"));

    write_text(dir / "tiny.cfg", "# tiny\ndim = 16\ndepth = 1\nheads = 2\nepochs = 3\nbatch_size = 4\n");
    REQUIRE(run({"train", "--stage", "1", "--manifest", dir / "cap/m.jsonl", "--config", dir / "tiny.cfg", "--out-dir",
                 dir / "r1", "--epochs", "2", "--quiet"})
                .code == 0);
    const auto rm = json::parse(slurp(dir / "r1/run_manifest.json"));
    CHECK(rm["config"]["epochs"] == 2);
    CHECK(rm["config"]["batch_size"] == 4);
    CHECK(rm["config"]["model"]["dim"] == 16);
    CHECK(fs::exists(dir / "r1/epoch_002.ckpt"));
    CHECK_FALSE(fs::exists(dir / "r1/epoch_003.ckpt"));

    REQUIRE(run({"train", "--stage", "2", "--manifest", dir / "cap/m.jsonl", "--config", dir / "tiny.cfg", "--out-dir",
                 dir / "r2", "--init-checkpoint", dir / "r1/epoch_002.ckpt", "--epochs", "1", "--quiet"})
                .code == 0);
    const std::string ck = dir / "r2/epoch_001.ckpt", lora = dir / "r2/epoch_001.lora.ckpt";
    REQUIRE(fs::exists(lora));

    for (const char* name : {"a.png", "b.png"})
        REQUIRE(run({"sample", "t2i", "--prompt", "a car", "--ckpt", ck, "--lora", lora, "--seed", "3", "--steps", "3",
                     "--out", dir / name})
                    .code == 0);
    CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
    auto ra = without_clock(dir / "a.png.run.json"), rb = without_clock(dir / "b.png.run.json");
    CHECK(ra["config"]["aligned_prompt"] == "a red car in the center-middle of the road");
    ra["outputs"].clear();
    rb["outputs"].clear();
    CHECK(ra == rb);

    const std::string src = fs::path(dir / "c") / entries[0].image_path;
    const auto edited = run({"sample", "edit", "--prompt", "zzz", "--image", src, "--bbox", "8,8,24,24", "--dilation",
                             "1", "--ckpt", ck, "--lora", lora, "--steps", "2", "--out", dir / "e.png"});
    REQUIRE(edited.code == 0);
    CHECK(edited.err.find("warning") != std::string::npos);
    const Image source = read_png(src), out = read_png(dir / "e.png");
    CHECK(out.at(0, 0, 0) == source.at(0, 0, 0));
    CHECK(run({"sample", "edit", "--prompt", "a", "--image", src, "--ckpt", ck, "--out", dir / "f.png"}).code == 2);

    for (const char* name : {"r1.json", "r2.json"})
        REQUIRE(run({"eval", "--manifest", dir / "cap/m.jsonl", "--ckpt", ck, "--lora", lora, "--modes", "t2i,edit",
                     "--steps", "2", "--seed", "5", "--out", dir / name})
                    .code == 0);
    CHECK(slurp(dir / "r1.json") == slurp(dir / "r2.json"));
    const auto report = json::parse(slurp(dir / "r1.json"));
    CHECK(report["modes"].contains("t2i"));
    CHECK(report["modes"].contains("edit"));
    CHECK(report["seeds"]["eval"] == 5);
    CHECK(report["records"] == 3);
    CHECK(run({"eval", "--manifest", dir / "cap/m.jsonl", "--ckpt", ck, "--modes", "bogus", "--out", dir / "x.json"})
              .code == 2);

    CHECK(run({"train", "--stage", "1", "--manifest", dir / "cap/m.jsonl", "--out-dir", dir / "r3", "--resume",
               dir / "r2/epoch_001.ckpt", "--quiet"})
              .code == 1);
}
