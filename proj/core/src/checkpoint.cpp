#include "gnnflavors/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace gnnflavors::tg {

using nlohmann::json;

std::string encode_hex_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

double decode_hex_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw LoadError("checkpoint: bad float literal '" + s + "'");
    return v;
}

void save_checkpoint(const std::string& path, const std::vector<TensorPtr>& params) {
    json tensors = json::array();
    std::unordered_map<std::string, bool> seen;
    for (const auto& p : params) {
        if (!p || p->name.empty()) throw ContractError("checkpoint: unnamed parameter");
        if (seen.count(p->name))
            throw ContractError("checkpoint: duplicate parameter name '" + p->name + "'");
        seen[p->name] = true;
        json values = json::array();
        for (double v : p->data) values.push_back(encode_hex_double(v));
        tensors.push_back({{"name", p->name}, {"shape", p->shape}, {"values", std::move(values)}});
    }
    json doc = {{"format", "gnnflavors-checkpoint-v1"}, {"tensors", std::move(tensors)}};
    std::ofstream out(path);
    if (!out) throw LoadError("checkpoint: cannot open '" + path + "' for writing");
    out << doc.dump(1) << "\n";
}

void load_checkpoint(const std::string& path, const std::vector<TensorPtr>& params) {
    std::ifstream in(path);
    if (!in) throw LoadError("checkpoint: cannot open '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw LoadError("checkpoint: JSON parse failure in '" + path + "': " + e.what());
    }
    if (doc.value("format", "") != "gnnflavors-checkpoint-v1")
        throw LoadError("checkpoint: unknown format in '" + path + "'");

    std::unordered_map<std::string, const json*> by_name;
    for (const auto& t : doc.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;

    for (const auto& p : params) {
        if (!p || p->name.empty()) throw ContractError("checkpoint: unnamed parameter");
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw LoadError("checkpoint: missing tensor '" + p->name + "' in '" + path + "'");
        const json& t = *it->second;
        const auto shape = t.at("shape").get<Shape>();
        if (shape != p->shape)
            throw LoadError("checkpoint: shape mismatch for '" + p->name + "': file " +
                            shape_str(shape) + " vs model " + shape_str(p->shape));
        const auto& values = t.at("values");
        if (values.size() != p->data.size())
            throw LoadError("checkpoint: value count mismatch for '" + p->name + "'");
        for (std::size_t i = 0; i < p->data.size(); ++i)
            p->data[i] = decode_hex_double(values[i].get<std::string>());
    }
}

}  // namespace gnnflavors::tg
