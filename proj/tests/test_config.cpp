#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "support.hpp"
#include "tvoc/config.hpp"
#include "tvoc/error.hpp"

using namespace tvoc;

namespace {

void expect_config_invalid(std::string_view text) {
    try {
        validate(parse_config(text));
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ConfigInvalid);
    }
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TVOC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text parses, ignores comments and round trips") {
    const RunConfig c = parse_config(
        "# a comment\n"
        "seed = 9\n"
        "dcn.k = 4\n"
        "dcn.k.dixon = 6\n"
        "fusion.mode = IF\n"
        "fusion.sequences = t1w, dixon\n"
        "analysis.alpha = 0.01\n");
    CHECK(c.seed == 9);
    CHECK(c.k_for("t1w") == 4);
    CHECK(c.k_for("dixon") == 6);
    CHECK(c.fusion == FusionMode::IF);
    CHECK(c.sequences == std::vector<std::string>{"t1w", "dixon"});
    CHECK(c.model_sequences() == std::vector<std::string>{"if"});
    const RunConfig r = parse_config(to_text(c));
    CHECK(to_text(r) == to_text(c));
    CHECK(config_hash(r) == config_hash(c));
    CHECK(config_hash(c).size() == 16);
    CHECK(config_hash(c) != config_hash(RunConfig{}));
}

TEST_CASE("manifest path defaults under the output directory") {
    RunConfig c;
    c.out_dir = "x";
    CHECK(c.manifest_path() == std::filesystem::path("x") / "cohort" / "manifest.json");
}

TEST_CASE("bad configs are rejected") {
    expect_config_invalid("no.such.key = 1\n");
    expect_config_invalid("dcn.k = 1\n");
    expect_config_invalid("analysis.folds = 1\n");
    expect_config_invalid("patch.size = 20\n");
    expect_config_invalid("seed = banana\n");
    expect_config_invalid("fusion.mode = XF\n");
}

TEST_CASE("CLI exit codes: 0 on success, 1 on user errors") {
    const auto dir = testing::scratch_dir("cli");
    CHECK(run_cli("--help") == 0);
    const std::string out = "--set out_dir=" + (dir / "run").string();
    CHECK(run_cli(out + " gradcheck") == 0);
    CHECK(std::filesystem::exists(dir / "run" / "gradcheck.csv"));
    CHECK(run_cli("--print-config") == 1);  // a stage is required
    CHECK(run_cli(out + " --set dcn.k=1 gradcheck") == 1);
    CHECK(run_cli(out + " --set bogus=3 gradcheck") == 1);
    CHECK(run_cli("-c " + (dir / "missing.cfg").string() + " gradcheck") == 1);
    CHECK(run_cli("no-such-stage") == 1);
    // A later stage without its inputs reports a missing artifact.
    CHECK(run_cli(out + " predict") == 1);
}
