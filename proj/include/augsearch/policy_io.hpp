#pragma once

// Policy JSON document:
//   {"K":int, "N":int, "logits":[[...]], "mag_upper":[...], "sigma":float, "transform_ids":[...]}

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "augsearch/errors.hpp"
#include "augsearch/policy.hpp"

namespace augsearch {

inline nlohmann::json policy_to_json(const Policy& p) {
    nlohmann::json doc;
    doc["K"] = p.num_slots();
    doc["N"] = p.num_transforms();
    auto logits = nlohmann::json::array();
    for (int k = 0; k < p.num_slots(); ++k) {
        auto row = nlohmann::json::array();
        for (int n = 0; n < p.num_transforms(); ++n) row.push_back(p.logits(k, n));
        logits.push_back(std::move(row));
    }
    doc["logits"] = std::move(logits);
    auto mu = nlohmann::json::array();
    for (int n = 0; n < p.num_transforms(); ++n) mu.push_back(p.mag_upper[n]);
    doc["mag_upper"] = std::move(mu);
    doc["sigma"] = p.sigma;
    auto ids = nlohmann::json::array();
    for (TransformId id : p.transforms) ids.push_back(std::string(to_string(id)));
    doc["transform_ids"] = std::move(ids);
    return doc;
}

inline Policy policy_from_json(const nlohmann::json& doc) {
    try {
        const int k = doc.at("K").get<int>();
        const int n = doc.at("N").get<int>();
        const auto& ids = doc.at("transform_ids");
        const auto& logits = doc.at("logits");
        const auto& mu = doc.at("mag_upper");
        if (k < 1 || n < 2 || static_cast<int>(ids.size()) != n || static_cast<int>(logits.size()) != k ||
            static_cast<int>(mu.size()) != n) {
            throw FormatError(FormatError::Kind::DimensionMismatch, "policy JSON: K/N disagree with array sizes");
        }
        Policy p;
        for (const auto& id : ids) {
            const auto parsed = transform_from_string(id.get<std::string>());
            if (!parsed) throw FormatError(FormatError::Kind::Malformed, "policy JSON: unknown transform '" + id.get<std::string>() + "'");
            p.transforms.push_back(*parsed);
        }
        p.logits.resize(k, n);
        for (int r = 0; r < k; ++r) {
            if (static_cast<int>(logits[static_cast<std::size_t>(r)].size()) != n) {
                throw FormatError(FormatError::Kind::DimensionMismatch, "policy JSON: logits row has wrong length");
            }
            for (int c = 0; c < n; ++c) p.logits(r, c) = logits[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
        }
        p.mag_upper.resize(n);
        for (int c = 0; c < n; ++c) p.mag_upper[c] = mu[static_cast<std::size_t>(c)].get<double>();
        p.sigma = doc.at("sigma").get<double>();
        validate(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("policy JSON: ") + e.what());
    } catch (const ArgumentError& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("policy JSON: ") + e.what());
    }
}

inline void save_policy(const Policy& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << policy_to_json(p).dump(2) << '\n';
}

inline Policy load_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open policy file '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("policy JSON: ") + e.what());
    }
    return policy_from_json(doc);
}

}  // namespace augsearch
