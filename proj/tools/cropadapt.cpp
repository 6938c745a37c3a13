// Command-line driver. Talks to the library only through cropadapt.h.
#include "cropadapt/cropadapt.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct LibraryError {
    ca_status status;
    std::string message;
};

void check(ca_status s) {
    if (s != CA_OK) throw LibraryError{s, ca_last_error()};
}

struct OwnedString {
    char* p = nullptr;
    ~OwnedString() { ca_string_free(p); }
    std::string str() const { return p ? std::string(p) : std::string(); }
};

struct DatasetDeleter {
    void operator()(ca_dataset* d) const { ca_dataset_close(d); }
};
struct ModelDeleter {
    void operator()(ca_model* m) const { ca_model_free(m); }
};
using DatasetPtr = std::unique_ptr<ca_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<ca_model, ModelDeleter>;

DatasetPtr open_dataset(const std::string& dir) {
    ca_dataset* d = nullptr;
    check(ca_dataset_open(dir.c_str(), &d));
    return DatasetPtr(d);
}

ModelPtr load_model(const std::string& path) {
    ca_model* m = nullptr;
    check(ca_model_load(path.c_str(), &m));
    return ModelPtr(m);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LibraryError{CA_MISSING_FILE, "cannot open " + path};
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw LibraryError{CA_IO, "cannot write " + path.string()};
}

void save_model(const ca_model* model, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    check(ca_model_save(model, path.string().c_str()));
}

Json parse(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw LibraryError{CA_SCHEMA_VIOLATION, what + ": " + e.what()};
    }
}

std::string sha256(const std::string& s) {
    OwnedString h;
    check(ca_sha256_hex(s.data(), s.size(), &h.p));
    return h.str();
}

std::string file_sha256(const std::string& path) {
    OwnedString h;
    check(ca_file_sha256(path.c_str(), &h.p));
    return h.str();
}

std::string dataset_hash(const std::string& dir) {
    OwnedString h;
    check(ca_dataset_hash(dir.c_str(), &h.p));
    return h.str();
}

// Config file (optional) with `key=value` overrides on top. Dotted keys reach
// into nested objects; values parse as JSON and fall back to plain strings.
Json build_config(const std::string& file, const std::vector<std::string>& sets) {
    Json cfg = file.empty() ? Json::object() : parse(read_file(file), file);
    if (!cfg.is_object()) throw LibraryError{CA_SCHEMA_VIOLATION, file + ": expected a JSON object"};
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw CLI::ValidationError("--set", "expected key=value, got \"" + kv + "\"");
        const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
        Json value;
        try {
            value = Json::parse(raw);
        } catch (const nlohmann::json::exception&) {
            value = raw;
        }
        Json* node = &cfg;
        std::stringstream parts(key);
        std::string part;
        std::vector<std::string> path;
        while (std::getline(parts, part, '.')) path.push_back(part);
        for (std::size_t i = 0; i + 1 < path.size(); ++i) node = &(*node)[path[i]];
        (*node)[path.back()] = value;
    }
    return cfg;
}

// Sidecar next to an output: `<output>.provenance.json`.
struct Provenance {
    std::string command;
    std::uint64_t seed = 0;
    bool has_seed = false;
    Json config = Json::object();
    Json inputs = Json::object();
    Json outputs = Json::array();

    void write(const fs::path& primary) const {
        Json j;
        j["command"] = command;
        j["library_version"] = ca_version();
        if (has_seed) j["seed"] = seed;
        j["config"] = config;
        j["config_hash"] = sha256(config.dump());
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        write_file(primary.string() + ".provenance.json", j.dump(2) + "\n");
    }
};

int cmd_gen(const std::string& domain, const std::string& domain_file, const std::string& scene_file,
            std::size_t n, std::uint64_t seed, const std::string& out) {
    Json domain_json = domain_file.empty() ? Json(domain) : parse(read_file(domain_file), domain_file);
    const Json scene = scene_file.empty() ? Json::object() : parse(read_file(scene_file), scene_file);
    OwnedString hash;
    check(ca_dataset_generate(out.c_str(), scene.dump().c_str(), domain_json.dump().c_str(), n, seed, &hash.p));
    Provenance p{"gen", seed, true, {{"domain", domain_json}, {"scene", scene}, {"n", n}}};
    if (!scene_file.empty()) p.inputs["scene"] = {{"path", scene_file}, {"sha256", file_sha256(scene_file)}};
    if (!domain_file.empty()) p.inputs["domain"] = {{"path", domain_file}, {"sha256", file_sha256(domain_file)}};
    p.outputs.push_back({{"path", out}, {"dataset_hash", hash.str()}});
    fs::path dir(out);
    if (!dir.has_filename()) dir = dir.parent_path();
    p.write(dir);
    std::cout << hash.str() << "\n";
    return 0;
}

void print_epoch(int epoch, double loss, void*) { std::fprintf(stderr, "epoch %d loss %.6f\n", epoch + 1, loss); }

int cmd_train(const std::string& data, const std::string& out, std::uint64_t seed, const Json& cfg,
              const std::string& arch_file) {
    const DatasetPtr ds = open_dataset(data);
    const Json arch = arch_file.empty() ? Json::object() : parse(read_file(arch_file), arch_file);
    ca_model* raw = nullptr;
    check(ca_model_init(arch.empty() ? nullptr : arch.dump().c_str(), seed, &raw));
    const ModelPtr model(raw);
    OwnedString losses;
    check(ca_train_source(model.get(), ds.get(), cfg.dump().c_str(), seed, print_epoch, nullptr, &losses.p));
    save_model(model.get(), out);

    const Json curve = parse(losses.str(), "loss curve");
    std::ostringstream csv;
    csv << "epoch,loss\n";
    csv.precision(10);
    for (std::size_t i = 0; i < curve.size(); ++i) csv << i + 1 << ',' << curve[i].get<double>() << '\n';
    write_file(out + ".loss.csv", csv.str());

    Provenance p{"train-source", seed, true, {{"train", cfg}, {"architecture", arch}}};
    p.inputs["data"] = {{"path", data}, {"dataset_hash", dataset_hash(data)}};
    p.outputs.push_back({{"path", out}, {"sha256", file_sha256(out)}});
    p.outputs.push_back({{"path", out + ".loss.csv"}});
    p.write(out);
    return 0;
}

int cmd_adapt(const std::string& model_path, const std::string& data, const std::string& out, std::uint64_t seed,
              const Json& cfg, const std::string& stage1) {
    const DatasetPtr ds = open_dataset(data);
    const ModelPtr model = load_model(model_path);
    OwnedString report, csv;
    check(ca_adapt(model.get(), ds.get(), cfg.dump().c_str(), seed, stage1.empty() ? nullptr : stage1.c_str(),
                   &report.p, &csv.p));
    save_model(model.get(), out);
    write_file(out + ".report.json", report.str() + "\n");
    write_file(out + ".report.csv", csv.str());

    Provenance p{"adapt", seed, true, {{"adapt", cfg}, {"stage1", stage1.empty() ? "config" : stage1}}};
    p.inputs["model"] = {{"path", model_path}, {"sha256", file_sha256(model_path)}};
    p.inputs["data"] = {{"path", data}, {"dataset_hash", dataset_hash(data)}};
    p.outputs.push_back({{"path", out}, {"sha256", file_sha256(out)}});
    p.outputs.push_back({{"path", out + ".report.json"}});
    p.outputs.push_back({{"path", out + ".report.csv"}});
    p.write(out);
    return 0;
}

std::string evaluate(const std::string& model_path, const std::string& data, const std::string& eye,
                     std::string* csv_out) {
    const DatasetPtr ds = open_dataset(data);
    const ModelPtr model = load_model(model_path);
    OwnedString report, csv;
    check(ca_eval(model.get(), ds.get(), eye.c_str(), &report.p, &csv.p));
    if (csv_out) *csv_out = csv.str();
    return report.str();
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& eye, const std::string& out) {
    std::string csv;
    const std::string report = evaluate(model_path, data, eye, &csv);
    write_file(out, report + "\n");
    write_file(fs::path(out).replace_extension(".csv"), csv);
    Provenance p{"eval", 0, false, {{"eye", eye}}};
    p.inputs["model"] = {{"path", model_path}, {"sha256", file_sha256(model_path)}};
    p.inputs["data"] = {{"path", data}, {"dataset_hash", dataset_hash(data)}};
    p.outputs.push_back({{"path", out}});
    p.write(out);
    std::cout << report << "\n";
    return 0;
}

int cmd_compare(const std::string& before, const std::string& after, const std::string& data, const std::string& eye,
                const std::string& out) {
    const std::string rb = evaluate(before, data, eye, nullptr);
    const std::string ra = evaluate(after, data, eye, nullptr);
    OwnedString text, csv;
    check(ca_compare(rb.c_str(), ra.c_str(), &text.p, &csv.p));
    const fs::path dir(out);
    write_file(dir / "before.json", rb + "\n");
    write_file(dir / "after.json", ra + "\n");
    write_file(dir / "comparison.csv", csv.str());
    write_file(dir / "comparison.txt", text.str());
    Provenance p{"compare", 0, false, {{"eye", eye}}};
    p.inputs["before"] = {{"path", before}, {"sha256", file_sha256(before)}};
    p.inputs["after"] = {{"path", after}, {"sha256", file_sha256(after)}};
    p.inputs["data"] = {{"path", data}, {"dataset_hash", dataset_hash(data)}};
    for (const char* f : {"before.json", "after.json", "comparison.csv", "comparison.txt"})
        p.outputs.push_back({{"path", (dir / f).string()}});
    p.write(dir / "comparison.csv");
    std::cout << text.str();
    return 0;
}

int cmd_viz(const std::string& model_path, const std::string& data, const std::string& out, std::size_t n) {
    const DatasetPtr ds = open_dataset(data);
    const ModelPtr model = load_model(model_path);
    OwnedString files;
    check(ca_viz(model.get(), ds.get(), out.c_str(), n, &files.p));
    Provenance p{"viz", 0, false, {{"n", n}}};
    p.inputs["model"] = {{"path", model_path}, {"sha256", file_sha256(model_path)}};
    p.inputs["data"] = {{"path", data}, {"dataset_hash", dataset_hash(data)}};
    for (const auto& f : parse(files.str(), "file list")) {
        const std::string path = (fs::path(out) / f.get<std::string>()).string();
        p.outputs.push_back({{"path", path}, {"sha256", file_sha256(path)}});
    }
    p.write(fs::path(out) / "overlays");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Crop-row keypoint adaptation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ca_version()));

    std::string domain, domain_file, scene_file, out, data, model, before, after, config_file, arch_file, stage1;
    std::string eye = "left";
    std::vector<std::string> sets;
    std::size_t n = 0;
    std::uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen", "Render a synthetic stereo dataset");
    auto* gen_domain = gen->add_option("--domain", domain, "Domain preset name");
    gen->add_option("--domain-config", domain_file, "Domain JSON: {\"preset\": name, overrides...}")
        ->check(CLI::ExistingFile)
        ->excludes(gen_domain);
    gen->add_option("--scene", scene_file, "Scene JSON with rig, rows, pose_ranges, sim")->check(CLI::ExistingFile);
    gen->add_option("--n", n, "Number of stereo pairs")->required();
    gen->add_option("--seed", seed, "Random seed")->required();
    gen->add_option("--out", out, "Output dataset directory")->required();

    auto* train = app.add_subcommand("train-source", "Supervised training on a labeled source dataset");
    train->add_option("--data", data, "Source dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", out, "Output model file")->required();
    train->add_option("--seed", seed, "Random seed")->required();
    train->add_option("--config", config_file, "TrainConfig JSON")->check(CLI::ExistingFile);
    train->add_option("--arch", arch_file, "Architecture JSON")->check(CLI::ExistingFile);
    train->add_option("--set", sets, "Config override key=value (repeatable)");

    auto* adapt = app.add_subcommand("adapt", "Self-supervised adaptation on an unlabeled target dataset");
    adapt->add_option("--model", model, "Source model file")->required()->check(CLI::ExistingFile);
    adapt->add_option("--data", data, "Target dataset directory")->required()->check(CLI::ExistingDirectory);
    adapt->add_option("--out", out, "Output model file")->required();
    adapt->add_option("--seed", seed, "Random seed")->required();
    adapt->add_option("--config", config_file, "AdaptConfig JSON")->check(CLI::ExistingFile);
    adapt->add_option("--set", sets, "Config override key=value (repeatable)");
    adapt->add_option("--stage1", stage1, "Stage-1 policy")->check(CLI::IsMember({"auto", "force", "skip"}));

    auto* eval = app.add_subcommand("eval", "Mean L1 per keypoint on a labeled dataset");
    eval->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data, "Labeled dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", out, "Output report (.json; a .csv is written beside it)")->required();
    eval->add_option("--eye", eye, "Eye to evaluate")->check(CLI::IsMember({"left", "right"}));

    auto* cmp = app.add_subcommand("compare", "Before/after evaluation on the same labeled dataset");
    cmp->add_option("--before", before, "Model before adaptation")->required()->check(CLI::ExistingFile);
    cmp->add_option("--after", after, "Model after adaptation")->required()->check(CLI::ExistingFile);
    cmp->add_option("--data", data, "Labeled dataset directory")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("--out", out, "Output directory")->required();
    cmp->add_option("--eye", eye, "Eye to evaluate")->check(CLI::IsMember({"left", "right"}));

    auto* viz = app.add_subcommand("viz", "Overlay predicted and true keypoint triangles");
    viz->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    viz->add_option("--data", data, "Labeled dataset directory")->required()->check(CLI::ExistingDirectory);
    viz->add_option("--out", out, "Output directory")->required();
    viz->add_option("--n", n, "Number of samples")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed() && domain.empty() && domain_file.empty())
            throw CLI::RequiredError("--domain or --domain-config");
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "cropadapt: usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(domain, domain_file, scene_file, n, seed, out);
        if (train->parsed()) return cmd_train(data, out, seed, build_config(config_file, sets), arch_file);
        if (adapt->parsed()) return cmd_adapt(model, data, out, seed, build_config(config_file, sets), stage1);
        if (eval->parsed()) return cmd_eval(model, data, eye, out);
        if (cmp->parsed()) return cmd_compare(before, after, data, eye, out);
        if (viz->parsed()) return cmd_viz(model, data, out, n);
    } catch (const CLI::ParseError& e) {
        std::cerr << "cropadapt: usage error: " << e.what() << "\n";
        return 2;
    } catch (const LibraryError& e) {
        std::cerr << "cropadapt: error: " << e.message << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "cropadapt: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
