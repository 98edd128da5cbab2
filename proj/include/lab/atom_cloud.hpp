#pragma once

// Bounded-support data distributions: finite weighted atom sets in R^d.
// radius is derived on construction and treated as the support bound.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/smallvec.hpp"

namespace lab {

struct AtomCloud {
    std::vector<Vec> atoms;
    std::vector<double> weights;
    std::size_t dim = 0;
    double radius = 0.0;  // max atom norm

    static AtomCloud make(std::vector<Vec> atoms_, std::vector<double> weights_) {
        AtomCloud c;
        c.atoms = std::move(atoms_);
        c.weights = std::move(weights_);
        if (c.atoms.empty()) throw std::invalid_argument("AtomCloud: no atoms");
        if (c.weights.size() != c.atoms.size())
            throw std::invalid_argument("AtomCloud: weights/atoms size mismatch");
        c.dim = c.atoms.front().size();
        if (c.dim == 0 || c.dim > LAB_MAX_DIM)
            throw std::invalid_argument("AtomCloud: dimension out of range");
        double wsum = 0.0;
        for (const Vec& a : c.atoms) {
            if (a.size() != c.dim) throw std::invalid_argument("AtomCloud: ragged atoms");
            if (!all_finite(a)) throw std::invalid_argument("AtomCloud: non-finite atom");
            c.radius = std::max(c.radius, norm(a));
        }
        for (double w : c.weights) {
            if (!(w >= 0.0) || !std::isfinite(w))
                throw std::invalid_argument("AtomCloud: bad weight");
            wsum += w;
        }
        if (std::abs(wsum - 1.0) > 1e-12)
            throw std::invalid_argument("AtomCloud: weights must sum to 1 (got " +
                                        std::to_string(wsum) + ")");
        return c;
    }

    // second moment of the data law, sum_i w_i |y_i|^2
    double second_moment() const {
        double s = 0.0;
        for (std::size_t i = 0; i < atoms.size(); ++i) s += weights[i] * norm2(atoms[i]);
        return s;
    }

    Vec mean() const {
        Vec m(dim);
        for (std::size_t i = 0; i < atoms.size(); ++i) m += weights[i] * atoms[i];
        return m;
    }
};

inline AtomCloud atom_cloud_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("atoms") || !j.contains("weights"))
        throw std::invalid_argument("AtomCloud json: need {\"atoms\", \"weights\"}");
    std::vector<Vec> atoms;
    for (const auto& row : j.at("atoms")) {
        Vec v(row.size() ? row.size() : 0);
        if (row.size() == 0 || row.size() > LAB_MAX_DIM)
            throw std::invalid_argument("AtomCloud json: atom dimension out of range");
        std::size_t i = 0;
        for (const auto& c : row) v[i++] = c.get<double>();
        atoms.push_back(v);
    }
    std::vector<double> weights = j.at("weights").get<std::vector<double>>();
    return AtomCloud::make(std::move(atoms), std::move(weights));
}

inline nlohmann::json atom_cloud_to_json(const AtomCloud& c) {
    nlohmann::json atoms = nlohmann::json::array();
    for (const Vec& a : c.atoms) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t i = 0; i < a.size(); ++i) row.push_back(a[i]);
        atoms.push_back(row);
    }
    return {{"atoms", atoms}, {"weights", c.weights}};
}

inline AtomCloud load_atom_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("load_atom_cloud: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return atom_cloud_from_json(j);
}

}  // namespace lab
