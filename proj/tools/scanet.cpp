#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scanet/commands.hpp"
#include "scanet/config.hpp"
#include "scanet/error.hpp"
#include "scanet/train.hpp"

namespace {

using namespace scanet;

struct Options {
    std::string config_path;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string variants;
    std::string ckpt;
    std::string image;
    int jobs = 1;
    bool force = false;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        require(b != std::string::npos, ErrorKind::usage, "empty entry in --variants");
        items.push_back(item.substr(b, e - b + 1));
    }
    return items;
}

// Defaults, then the config file, then flags.
RunConfig resolve(const Options& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    if (!o.data.empty()) c.data_root = o.data;
    if (!o.out.empty()) c.output_root = o.out;
    if (!o.variants.empty()) {
        c.variants.clear();
        for (const auto& name : split_list(o.variants)) {
            try {
                c.variants.push_back(parse_variant(name));
            } catch (const Error& e) {
                fail(ErrorKind::usage, e.what());
            }
        }
        // A single listed variant also selects what `train` runs.
        if (c.variants.size() == 1) c.model.encoder.variant = c.variants.front();
    }
    c.validate();
    return c;
}

std::uint64_t train_seed(const Options& o, const RunConfig& c) { return o.seed ? *o.seed : c.seeds.front(); }

int run(int argc, char** argv) {
    CLI::App app{"Split coordinate attention segmentation toolkit"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--data", o.data, "dataset root");
        sub->add_option("--out", o.out, "output root");
        sub->add_option("--seed", o.seed, "seed");
        sub->add_option("--variants", o.variants, "comma-separated subset of baseline,sa,ca,sca");
        sub->add_flag("--force", o.force, "overwrite existing outputs");
    };

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "train one variant");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    auto* ablate = app.add_subcommand("ablate", "train every variant for every seed and tabulate");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    auto* simmatrix = app.add_subcommand("simmatrix", "stage-4 diagonal similarity matrix");
    auto* params = app.add_subcommand("params", "parameter counts per variant");
    for (auto* sub : {gen, train, eval, ablate, gradcheck, simmatrix, params}) common(sub);
    for (auto* sub : {eval, simmatrix}) sub->add_option("--ckpt", o.ckpt, "checkpoint (default <run dir>/best.ckpt)");
    simmatrix->add_option("--image", o.image, "input PPM (default first validation image)");
    ablate->add_option("--jobs", o.jobs, "parallel worker processes")->check(CLI::Range(1, 256));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        return 2;
    }

    configure_allocator();
    auto& log = std::cout;

    if (gradcheck->parsed()) {
        cmd_gradcheck(o.seed.value_or(0), log);
        return 0;
    }
    const RunConfig c = resolve(o);
    if (gen->parsed()) {
        cmd_gen(c, o.force, log);
    } else if (train->parsed()) {
        cmd_train(c, train_seed(o, c), o.force, log);
    } else if (eval->parsed()) {
        const auto seed = train_seed(o, c);
        const std::string ckpt = o.ckpt.empty() ? run_dir(c, c.variant(), seed) + "/best.ckpt" : o.ckpt;
        cmd_eval(c, ckpt, seed, log);
    } else if (ablate->parsed()) {
        RunConfig a = c;
        if (o.seed) a.seeds = {*o.seed};
        cmd_ablate(a, o.force, o.jobs, log);
    } else if (simmatrix->parsed()) {
        const std::string ckpt = o.ckpt.empty() ? run_dir(c, c.variant(), train_seed(o, c)) + "/best.ckpt" : o.ckpt;
        cmd_simmatrix(c, ckpt, o.image, log);
    } else if (params->parsed()) {
        const auto report = cmd_params(c, log);
        return report.ordering_holds ? 0 : 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const scanet::Error& e) {
        std::cerr << "error[" << scanet::to_string(e.kind()) << "]: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
    }
    return 1;
}
