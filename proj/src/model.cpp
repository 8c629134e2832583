#include "prefopt/model.hpp"

#include <fstream>

#include <json.hpp>

namespace prefopt {

using nlohmann::json;

const char* arch_name(Arch arch) {
    switch (arch) {
    case Arch::TabularBigram:
        return "tabular-bigram";
    case Arch::MlpPool:
        return "mlp-pool";
    }
    throw std::invalid_argument("arch_name: unknown arch");
}

Arch arch_from_name(const std::string& name) {
    if (name == "tabular-bigram") {
        return Arch::TabularBigram;
    }
    if (name == "mlp-pool") {
        return Arch::MlpPool;
    }
    throw std::invalid_argument("unknown arch '" + name + "'");
}

ModelParams init_params(Rng& rng, Arch arch, int vocab_size, int embed_dim, int hidden_dim,
                        double scale) {
    if (vocab_size < 2) {
        throw std::invalid_argument("init_params: vocab_size must be >= 2");
    }
    if (!(scale > 0.0)) {
        throw std::invalid_argument("init_params: scale must be > 0");
    }
    ModelParams p;
    p.arch = arch;
    p.vocab_size = vocab_size;
    p.init_seed = rng.seed();
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (double& x : v) {
            x = rng.uniform(-scale, scale);
        }
    };
    const std::size_t vocab = static_cast<std::size_t>(vocab_size);
    if (arch == Arch::TabularBigram) {
        fill(p.bigram, vocab * vocab);
        return p;
    }
    if (embed_dim < 1 || hidden_dim < 1) {
        throw std::invalid_argument("init_params: mlp-pool dims must be >= 1");
    }
    p.embed_dim = embed_dim;
    p.hidden_dim = hidden_dim;
    const std::size_t d = static_cast<std::size_t>(embed_dim);
    const std::size_t h = static_cast<std::size_t>(hidden_dim);
    fill(p.embed, vocab * d);
    fill(p.w1, h * d);
    fill(p.b1, h);
    fill(p.w2, vocab * h);
    fill(p.b2, vocab);
    return p;
}

std::vector<double> flatten_params(const ModelParams& p) {
    std::vector<double> flat;
    flat.reserve(p.param_count());
    p.for_each_array([&](const std::vector<double>& v) { flat.insert(flat.end(), v.begin(), v.end()); });
    return flat;
}

void unflatten_params(ModelParams& p, std::span<const double> flat) {
    if (flat.size() != p.param_count()) {
        throw std::invalid_argument("unflatten_params: size mismatch");
    }
    std::size_t offset = 0;
    p.for_each_array([&](std::vector<double>& v) {
        std::copy(flat.begin() + offset, flat.begin() + offset + v.size(), v.begin());
        offset += v.size();
    });
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
    json record;
    record["arch"] = arch_name(p.arch);
    record["vocab_size"] = p.vocab_size;
    record["embed_dim"] = p.embed_dim;
    record["hidden_dim"] = p.hidden_dim;
    record["init_seed"] = p.init_seed;
    if (p.arch == Arch::TabularBigram) {
        record["bigram"] = p.bigram;
    } else {
        record["embed"] = p.embed;
        record["w1"] = p.w1;
        record["b1"] = p.b1;
        record["w2"] = p.w2;
        record["b2"] = p.b2;
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    }
    out << record.dump(2) << "\n";
    if (!out) {
        throw std::runtime_error("save_checkpoint: write failed for " + path.string());
    }
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    }
    json record;
    try {
        in >> record;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("load_checkpoint: " + path.string() + ": " + e.what());
    }
    ModelParams p;
    p.arch = arch_from_name(record.at("arch").get<std::string>());
    p.vocab_size = record.at("vocab_size").get<int>();
    p.embed_dim = record.at("embed_dim").get<int>();
    p.hidden_dim = record.at("hidden_dim").get<int>();
    p.init_seed = record.at("init_seed").get<std::uint64_t>();
    const std::size_t vocab = static_cast<std::size_t>(p.vocab_size);
    auto read_array = [&](const char* key, std::vector<double>& v, std::size_t expect) {
        v = record.at(key).get<std::vector<double>>();
        if (v.size() != expect) {
            throw std::runtime_error("load_checkpoint: array '" + std::string(key) +
                                     "' has wrong size");
        }
    };
    if (p.arch == Arch::TabularBigram) {
        read_array("bigram", p.bigram, vocab * vocab);
    } else {
        const std::size_t d = static_cast<std::size_t>(p.embed_dim);
        const std::size_t h = static_cast<std::size_t>(p.hidden_dim);
        read_array("embed", p.embed, vocab * d);
        read_array("w1", p.w1, h * d);
        read_array("b1", p.b1, h);
        read_array("w2", p.w2, vocab * h);
        read_array("b2", p.b2, vocab);
    }
    return p;
}

} // namespace prefopt
