#include <homproj/harness/experiment.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace homproj;
using namespace homproj::harness;

namespace {

Json read_json(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw config_error(file.string(), "cannot open config file");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw config_error(file.string(), e.what());
    }
}

std::string stem_of(const Json& j, const fs::path& file)
{
    return j.value("name", file.stem().string());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Homogeneous projection experiment harness"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_given = false;
    unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

    auto* run = app.add_subcommand("run", "Run one experiment config");
    auto* sweep = app.add_subcommand("sweep", "Cost-error sweep over methods and tolerances/steps");
    auto* converge = app.add_subcommand("converge", "One-step pseudo-projection convergence study");
    auto* list_problems = app.add_subcommand("list-problems", "List problem ids");
    auto* list_methods = app.add_subcommand("list-methods", "List base methods and projection kinds");

    for (auto* sub : {run, sweep, converge}) {
        sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory");
    }
    run->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Override the config seed");
    sweep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (list_problems->parsed()) {
            for (const auto& id : problem_ids()) std::cout << id << "\n";
            return 0;
        }
        if (list_methods->parsed()) {
            std::cout << "base methods:\n";
            for (const auto& id : base_method_ids())
                std::cout << "  " << id << (is_adaptive(id) ? " (adaptive: rtol/atol)" : id == "adaptive_suzuki8" ? " (eps)" : " (h)")
                          << "\n";
            std::cout << "projections:\n";
            for (const auto& id : projection_kinds()) std::cout << "  " << id << "\n";
            return 0;
        }

        const Json j = read_json(config_path);
        const fs::path out(out_dir);
        fs::create_directories(out);

        if (run->parsed()) {
            ExperimentConfig cfg = ExperimentConfig::from_json(j);
            if (seed_given) cfg.seed = seed;
            const Json record = run_experiment(cfg, out);
            int failed = 0;
            for (const auto& r : record.at("runs")) failed += r.at("status") != "ok";
            std::cout << cfg.name << ": " << record.at("runs").size() << " run(s), " << failed << " failed -> "
                      << (out / (cfg.name + ".record.json")).string() << "\n";
            return failed ? 2 : 0;
        }
        if (sweep->parsed()) {
            const auto rows = cost_error_sweep(j, jobs);
            const Problem p = build_problem(j.at("problem"));
            std::vector<std::string> labels;
            for (const auto& inv : p.system->invariants) labels.push_back(inv.label);
            const fs::path file = out / (stem_of(j, config_path) + ".sweep.csv");
            std::ofstream csv(file);
            write_sweep_csv(csv, rows, labels);
            std::cout << rows.size() << " row(s) -> " << file.string() << "\n";
            return 0;
        }
        if (converge->parsed()) {
            const auto rows = convergence_study(j);
            const std::string stem = stem_of(j, config_path);
            std::ofstream slopes(out / (stem + ".slopes.csv"));
            std::ofstream points(out / (stem + ".points.csv"));
            write_convergence_csv(slopes, points, rows);
            for (const auto& r : rows)
                std::cout << "(p,q,r)=(" << r.p << "," << r.q << "," << r.r << ") expected " << r.expected()
                          << " slope " << r.slope << " [" << r.status << "]\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
