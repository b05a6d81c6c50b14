#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pblab/catalog.hpp"
#include "pblab/dsl.hpp"

namespace {

constexpr int kUsage = 1;

// FILE or catalog:NAME
std::optional<std::string> load(const std::string& source) {
    if (source.rfind("catalog:", 0) == 0) {
        std::string name = source.substr(8);
        for (const auto& [n, text] : pblab::fixture_catalog())
            if (n == name) return text;
        std::cerr << "pblab: no fixture named '" << name << "'\n";
        return std::nullopt;
    }
    std::ifstream in(source);
    if (!in) {
        std::cerr << "pblab: cannot read " << source << "\n";
        return std::nullopt;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --seed, then PBLAB_SEED, then 1.
std::optional<std::uint64_t> choose_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return flag;
    const char* env = std::getenv("PBLAB_SEED");
    if (!env) return 1;
    try {
        size_t used = 0;
        std::uint64_t s = std::stoull(env, &used);
        if (used == std::string(env).size()) return s;
    } catch (const std::exception&) {
    }
    std::cerr << "pblab: PBLAB_SEED must be a nonnegative integer\n";
    return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pblab: diffeological vector pseudo-bundles, gluing and pseudo-metrics"};
    app.require_subcommand(1);

    std::string run_file, json_out;
    std::optional<std::uint64_t> seed_flag;
    auto* run = app.add_subcommand("run", "Execute a document and print its JSON report");
    run->add_option("FILE", run_file, "Document path or catalog:NAME")->required();
    run->add_option("--json", json_out, "Also write the report to this file");
    run->add_option("--seed", seed_flag, "Sampling seed (overrides PBLAB_SEED)");

    std::string check_file;
    bool print_canonical = false;
    auto* check = app.add_subcommand("check", "Parse and check a document without running it");
    check->add_option("FILE", check_file, "Document path or catalog:NAME")->required();
    check->add_flag("--print", print_canonical, "Print the canonical form");

    std::string show;
    auto* catalog = app.add_subcommand("catalog", "List shipped fixtures, or print one");
    catalog->add_option("NAME", show, "Fixture to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    if (*catalog) {
        for (const auto& [name, text] : pblab::fixture_catalog()) {
            if (show.empty()) std::cout << name << "\n";
            else if (name == show) {
                std::cout << text;
                return 0;
            }
        }
        if (!show.empty()) {
            std::cerr << "pblab: no fixture named '" << show << "'\n";
            return kUsage;
        }
        return 0;
    }

    if (*check) {
        auto text = load(check_file);
        if (!text) return kUsage;
        try {
            pblab::dsl::Document doc = pblab::dsl::parse(*text);
            if (print_canonical) std::cout << pblab::dsl::print(doc);
            else std::cout << "ok: " << doc.decls.size() << " statements\n";
            return 0;
        } catch (const pblab::Error& e) {
            std::cerr << check_file << ": " << e.what() << "\n";
            return kUsage;
        }
    }

    auto text = load(run_file);
    if (!text) return kUsage;
    auto seed = choose_seed(seed_flag);
    if (!seed) return kUsage;
    pblab::dsl::Report rep = pblab::dsl::run_text(*text, *seed);
    std::string body = rep.json.dump(2) + "\n";
    std::cout << body;
    if (!json_out.empty()) {
        std::ofstream out(json_out);
        if (!out) {
            std::cerr << "pblab: cannot write " << json_out << "\n";
            return kUsage;
        }
        out << body;
    }
    if (rep.json.contains("error")) std::cerr << "pblab: " << rep.json["error"]["kind"].get<std::string>() << ": "
                                              << rep.json["error"]["message"].get<std::string>() << "\n";
    return rep.exit_code;
}
