#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "thinrod/commands.hpp"

using namespace thinrod;

namespace {

void emit(const CommandResult& r, const std::filesystem::path& dir) {
    json report = r.report;
    report["warnings"] = r.warnings;
    report["failures"] = r.failures;
    report["pass"] = r.failures.empty();
    if (!r.written.empty()) report["files"] = r.written;
    write_text((dir / (r.name + ".csv")).string(), r.csv);
    write_text((dir / (r.name + ".json")).string(), json_text(report));
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& f : r.failures) std::cerr << "FAIL " << f << '\n';
}

// one JSON line on stderr so callers can parse the failure
int fail(int code, const std::string& kind, const std::string& msg) {
    std::cerr << json{{"error", kind}, {"message", msg}}.dump() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"thinrod: eigenvalue asymptotics of thin curved rods"};
    app.require_subcommand(1);
    std::string config, out;

    auto add = [&](const std::string& name, const std::string& help, bool need_config) {
        auto* sc = app.add_subcommand(name, help);
        auto* opt = sc->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
        if (need_config) opt->required();
        sc->add_option("--out", out, "output directory (overrides output.dir)");
        return sc;
    };
    auto* expand = add("expand", "expansion coefficients lambda_i", true);
    auto* verify = add("verify", "direct solve and certificate at each epsilon", true);
    auto* sweep = add("sweep", "verify over an epsilon sweep with fitted rates", true);
    auto* selftest = add("selftest", "run the built-in exactness checks", false);
    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig rc;
        if (!config.empty()) rc = parse_config(config);
        if (!out.empty()) rc.out_dir = out;
        std::filesystem::create_directories(rc.out_dir);

        CommandResult r;
        if (selftest->parsed()) {
            r = cmd_selftest();
            std::cout << r.csv;
        } else {
            Workspace ws(rc);
            if (expand->parsed()) r = cmd_expand(ws);
            else if (verify->parsed()) r = cmd_verify(ws);
            else if (sweep->parsed()) r = cmd_sweep(ws);
            std::cout << r.csv;
        }
        emit(r, rc.out_dir);
        return r.exit_code();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigError) return fail(kConfigError, to_string(e.kind()), e.what());
        // a solvability violation is a failed check, not a crash
        if (e.kind() == ErrorKind::SolvabilityViolation) return fail(kChecksFailed, to_string(e.kind()), e.what());
        return fail(kRuntimeError, to_string(e.kind()), e.what());
    } catch (const std::exception& e) {
        return fail(kRuntimeError, "Exception", e.what());
    }
}
