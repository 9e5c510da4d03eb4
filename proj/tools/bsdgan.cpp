// Command-line front end: one subcommand per pipeline stage.
#include "bsdgan/errors.hpp"
#include "bsdgan/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Balance imbalanced sensor-activity datasets with an autoencoder-initialized conditional GAN"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool resume = false;
    app.add_option("--config", config_path, "INI config file (defaults apply when omitted)");
    app.add_option("--seed", seed, "master seed, overrides run.seed");
    app.add_option("--out", out_dir, "output directory, overrides run.out_dir");
    app.add_flag("--resume", resume, "continue GAN training from the latest checkpoint");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"prepare", "parse raw data into a split, normalized dataset container"},
        {"pretrain", "train the autoencoder and fit the latent prior"},
        {"train", "adversarial training from the pretrained autoencoder"},
        {"balance", "top up minority classes with verified generated windows"},
        {"evaluate-fid", "FID of generated data against best/worst references"},
        {"benchmark", "classifier benchmark before and after balancing"},
        {"report", "merge all stage outputs into one report"},
        {"toy-data", "write the built-in three-class waveform dataset"},
    };
    for (const auto& [name, help] : commands)
        app.add_subcommand(name, help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : bsdgan::exit_code::config;
    }

    try {
        auto config = config_path.empty() ? bsdgan::parse_config("") : bsdgan::load_config(config_path);
        if (seed)
            config.seed = *seed;
        if (!out_dir.empty())
            config.out_dir = out_dir;
        bsdgan::Pipeline pipeline(config, std::cout);
        pipeline.run(app.get_subcommands().front()->get_name(), resume);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return bsdgan::exit_code_for(e);
    }
    return 0;
}
