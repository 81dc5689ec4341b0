#include <gtest/gtest.h>

#include <openssl/sha.h>

#include <filesystem>

#include "mmcav/io.hpp"
#include "mmcav/run.hpp"
#include "mmcav/svg.hpp"

using namespace mmcav;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mmcav_io_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

svg::Figure sample_figure() {
    svg::Figure f;
    f.title = "Qi <vs> n";
    svg::Panel p;
    p.logx = true;
    p.style = svg::Style::scatter;
    p.series.push_back({{1, 10, 100, 1000}, {3e7, 2.9e7, 2.5e7, 1e7}, "qi", false});
    svg::Panel q;
    q.series.push_back({{1, 2, 3}, {1, 4, 9}, "a", false});
    q.series.push_back({{1, 2, 3}, {-1, -2, -3}, "b", true});
    f.panels = {p, q};
    return f;
}

}  // namespace

TEST(Csv, NumbersRoundTripExactly) {
    TempDir t;
    io::CsvWriter w({"x", "y"});
    const std::vector<double> xs = {0.1, 1.0 / 3.0, 98.218508e9, -1e-300, 6.02214076e23};
    for (double x : xs) w.row({x, -x});
    io::write_text(t.path / "a.csv", w.str());
    const auto table = io::read_csv(t.path / "a.csv");
    const auto back = table.numbers("x");
    ASSERT_EQ(back.size(), xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(back[i], xs[i]);
    EXPECT_THROW(table.column("z"), UsageError);
}

TEST(Csv, RowWidthIsChecked) {
    io::CsvWriter w({"a", "b"});
    EXPECT_THROW(w.row({1.0}), DomainError);
}

TEST(Csv, ReaderRejectsRaggedAndNonNumeric) {
    TempDir t;
    io::write_text(t.path / "r.csv", "a,b\n1,2\n3\n");
    EXPECT_THROW(io::read_csv(t.path / "r.csv"), UsageError);
    io::write_text(t.path / "n.csv", "# comment\na,b\n1,x\n");
    const auto table = io::read_csv(t.path / "n.csv");
    EXPECT_THROW(table.numbers("b"), UsageError);
    EXPECT_EQ(table.numbers("a").front(), 1.0);
    io::write_text(t.path / "e.csv", "");
    EXPECT_THROW(io::read_csv(t.path / "e.csv"), UsageError);
    EXPECT_THROW(io::read_csv(t.path / "missing.csv"), UsageError);
}

TEST(Json, InvalidTextIsUsageError) {
    TempDir t;
    io::write_text(t.path / "bad.json", "{\"a\": ");
    EXPECT_THROW(io::read_json(t.path / "bad.json"), UsageError);
}

TEST(Sha256, MatchesKnownVectorsAndOpenSsl) {
    EXPECT_EQ(run::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(run::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const std::string s(10000, 'x');
    unsigned char md[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(s.data()), s.size(), md);
    char hex[2 * SHA256_DIGEST_LENGTH + 1];
    for (int i = 0; i < SHA256_DIGEST_LENGTH; ++i) std::snprintf(hex + 2 * i, 3, "%02x", md[i]);
    EXPECT_EQ(run::sha256_hex(s), hex);
}

TEST(Cfg, UnknownFieldIsReportedWithPath) {
    run::Cfg c(nlohmann::json::parse(R"({"a": 1, "inner": {"b": 2, "typo": 3}})"));
    EXPECT_EQ(c.num("a", 0), 1.0);
    const auto inner = c.obj("inner");
    EXPECT_EQ(inner.num("b", 0), 2.0);
    c.finish();
    try {
        inner.finish();
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_EQ(e.field(), "inner.typo");
    }
}

TEST(Cfg, TypeErrorsCarryFieldPath) {
    run::Cfg c(nlohmann::json::parse(R"({"n": "x", "k": 1.5, "list": [1, "a"], "arr": [{"q": true}]})"));
    try {
        c.num("n", 0);
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_EQ(e.field(), "n");
    }
    EXPECT_THROW(c.integer("k", 0), UsageError);
    try {
        c.nums("list");
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_EQ(e.field(), "list[1]");
    }
    const auto arr = c.objs("arr");
    ASSERT_EQ(arr.size(), 1u);
    EXPECT_THROW(arr[0].num("q", 0), UsageError);
    EXPECT_THROW(c.num_req("absent"), UsageError);
    EXPECT_THROW(run::Cfg(nlohmann::json::array()), UsageError);
}

TEST(StagedOutput, NothingVisibleUntilCommit) {
    TempDir t;
    const fs::path out = t.path / "result";
    {
        run::StagedOutput s(out);
        s.write("a.csv", "x\n1\n");
        EXPECT_FALSE(fs::exists(out));
        EXPECT_TRUE(fs::exists(s.dir() / "a.csv"));
        EXPECT_EQ(s.dir().parent_path(), out.parent_path());
    }
    // Abandoned staging directories are removed and the target never appears.
    EXPECT_FALSE(fs::exists(out));
    EXPECT_EQ(std::distance(fs::directory_iterator(t.path), fs::directory_iterator()), 0);
}

TEST(StagedOutput, CommitReplacesPreviousRun) {
    TempDir t;
    const fs::path out = t.path / "result";
    fs::create_directories(out);
    io::write_text(out / "stale.txt", "old");
    run::StagedOutput s(out);
    s.write("new.txt", "new");
    s.commit();
    EXPECT_TRUE(fs::exists(out / "new.txt"));
    EXPECT_FALSE(fs::exists(out / "stale.txt"));
    EXPECT_EQ(std::distance(fs::directory_iterator(t.path), fs::directory_iterator()), 1);
}

TEST(Manifest, ListsEveryFileWithMatchingChecksum) {
    TempDir t;
    run::StagedOutput s(t.path / "m");
    s.write("a.csv", "x\n1\n");
    fs::create_directories(s.dir() / "sub");
    s.write("sub/b.json", "{}\n");
    run::ManifestInfo info;
    info.command = "table1";
    info.config = {{"k", 1}};
    const auto m = run::write_manifest(s, info);
    s.commit();
    ASSERT_EQ(m["artifacts"].size(), 2u);
    for (const auto& a : m["artifacts"]) {
        const std::string text = io::read_text(t.path / "m" / a["file"].get<std::string>());
        EXPECT_EQ(a["sha256"], run::sha256_hex(text));
        EXPECT_EQ(a["bytes"].get<std::size_t>(), text.size());
    }
    EXPECT_EQ(m["config_sha256"], run::sha256_hex(info.config.dump()));
    const auto on_disk = io::read_json(t.path / "m" / run::manifest_name);
    EXPECT_EQ(on_disk["artifacts"], m["artifacts"]);
}

TEST(Svg, RenderIsDeterministicAndEscaped) {
    const auto a = svg::render(sample_figure()), b = svg::render(sample_figure());
    EXPECT_EQ(a, b);
    EXPECT_NE(a.find("<svg"), std::string::npos);
    EXPECT_NE(a.find("&lt;vs&gt;"), std::string::npos);
    EXPECT_EQ(a.find("<vs>"), std::string::npos);
    EXPECT_NE(a.find("</svg>"), std::string::npos);
}

TEST(Svg, InvalidSpecsArePlotSpecErrors) {
    svg::Figure empty;
    EXPECT_THROW(svg::render(empty), PlotSpecError);
    auto f = sample_figure();
    f.panels[1].series.clear();
    EXPECT_THROW(svg::render(f), PlotSpecError);
    f = sample_figure();
    f.panels[0].series[0].y.pop_back();
    EXPECT_THROW(svg::render(f), PlotSpecError);
}
