// singular-pool: experiment driver.
//
//   singular-pool ingest|train|attack|bounds|convergence|report --config FILE [--out DIR] [--seed-offset N]
//
// Exit codes: 0 success, 2 validation error, 3 runtime error.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "spool/experiment.hpp"

namespace {

constexpr int kValidation = 2;
constexpr int kRuntime = 3;

void print_fragment(const nlohmann::json& f) {
    std::cout << f.value("kind", std::string("report")) << " " << f.value("config_hash", std::string()).substr(0, 12)
              << "\n";
    if (!f.contains("per_seed")) return;
    for (const auto& r : f.at("per_seed")) {
        std::cout << "  seed " << r.at("seed");
        for (const auto& [k, v] : r.at("metrics").items()) std::cout << " " << k << "=" << v.dump();
        std::cout << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RS-Pool experiments: training, attacks, robustness bounds, convergence"};
    app.require_subcommand(1);
    std::string config, out;
    std::uint64_t offset = 0;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", config, "experiment config (JSON)");
        if (config_required) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory (overrides the config)");
        sub->add_option("--seed-offset", offset, "added to every configured seed");
    };
    for (const char* name : {"ingest", "train", "attack", "bounds", "convergence"})
        add_common(app.add_subcommand(name, std::string(name) + " phase"), true);
    add_common(app.add_subcommand("report", "merge fragments into summary.json and summary.csv"), false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kValidation;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (cmd == "report") {
            std::filesystem::path dir = out;
            if (dir.empty()) {
                if (config.empty()) throw spool::ValidationError("report: give --out or --config");
                dir = spool::load_config(config).output;
            }
            const auto s = spool::cmd_report(dir);
            std::cout << "report " << s.at("config_hash").get<std::string>().substr(0, 12) << " -> "
                      << (dir / "summary.json").string() << "\n";
            for (const auto& cell : s.at("cells"))
                std::cout << "  " << cell.at("kind").get<std::string>() << "." << cell.at("metric").get<std::string>()
                          << " = " << cell.at("mean") << " +- " << cell.at("std") << " (n=" << cell.at("count") << ")\n";
            return 0;
        }
        spool::ExperimentConfig c = spool::load_config(config);
        if (!out.empty()) c.output = out;
        for (auto& s : c.seeds) s += offset;
        c.validate();
        nlohmann::json f;
        if (cmd == "ingest") f = spool::cmd_ingest(c);
        else if (cmd == "train") f = spool::cmd_train(c);
        else if (cmd == "attack") f = spool::cmd_attack(c);
        else if (cmd == "bounds") f = spool::cmd_bounds(c);
        else f = spool::cmd_convergence(c);
        if (cmd == "ingest") std::cout << f.at("dataset").dump(2) << "\n";
        else print_fragment(f);
        return 0;
    } catch (const spool::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const spool::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const spool::IngestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}
