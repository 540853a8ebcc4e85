// Command-line front end: one subcommand per run mode plus `recipe`.

#include <aggregation/experiment.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace aggregation;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string recipe;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

void add_flags(CLI::App* cmd, Options& o)
{
    cmd->add_option("--config", o.config, "INI config file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--recipe", o.recipe, "named reproduction")->check(CLI::IsMember(recipe_names()));
    cmd->add_option("--seed", o.seed, "sampling seed");
    cmd->add_option("--threads", o.threads, "worker threads for particle forces");
}

ExperimentConfig resolve(Mode mode, const Options& o)
{
    ExperimentConfig c;
    if (!o.recipe.empty()) {
        bool found = false;
        for (const auto& r : recipe(o.recipe, o.out.empty() ? "out" : o.out))
            if (r.mode == mode) {
                c = r;
                found = true;
                break;
            }
        if (!found)
            fail(ErrorKind::config, "recipe '" + o.recipe + "' has no " + to_string(mode) + " run");
    } else if (!o.config.empty()) {
        c = load_config(o.config);
        if (c.mode != mode)
            fail(ErrorKind::config, "config mode " + to_string(c.mode) + " does not match subcommand " + to_string(mode));
    } else {
        fail(ErrorKind::config, "either --config or --recipe is required");
    }
    if (!o.out.empty() && o.recipe.empty())
        c.output = o.out;
    if (o.seed != 0)
        c.seed = o.seed;
    if (o.threads != 0)
        c.threads = o.threads;
    return c;
}

int report(const AggregationError& e)
{
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    std::cout << "reason: " << e.what() << '\n';
    return exit_code(e.kind());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Radial aggregation solver with Newtonian repulsion"};
    app.require_subcommand(1);
    Options opts;
    std::vector<std::pair<CLI::App*, Mode>> modes;
    for (Mode m : {Mode::steady, Mode::simulate_radial, Mode::simulate_particles, Mode::attract_steady, Mode::rates,
                   Mode::validate}) {
        auto* cmd = app.add_subcommand(to_string(m), "run mode " + to_string(m));
        add_flags(cmd, opts);
        modes.emplace_back(cmd, m);
    }
    auto* rec = app.add_subcommand("recipe", "run every config of a named reproduction");
    add_flags(rec, opts);
    auto* list = app.add_subcommand("recipes", "list recipe names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (list->parsed()) {
            for (const auto& n : recipe_names())
                std::cout << n << '\n';
            return 0;
        }
        if (rec->parsed()) {
            if (opts.recipe.empty())
                fail(ErrorKind::config, "recipe needs --recipe NAME");
            const auto out = run_recipe(opts.recipe, opts.out.empty() ? "out" : opts.out,
                                        opts.seed ? opts.seed : 1, opts.threads ? opts.threads : 1);
            std::cout << out.dump(2) << '\n';
            return 0;
        }
        for (const auto& [cmd, mode] : modes)
            if (cmd->parsed()) {
                const auto result = run(resolve(mode, opts));
                std::cout << result.summary.dump(2) << '\n';
                return 0;
            }
    } catch (const AggregationError& e) {
        return report(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
