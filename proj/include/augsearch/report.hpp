#pragma once

// Post-hoc plots from a search trace: slot-averaged probability curves (CSV
// and SVG) and a pie chart of the final policy.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "augsearch/errors.hpp"
#include "augsearch/policy.hpp"
#include "augsearch/raster.hpp"

namespace augsearch {

struct TraceTable {
    std::vector<std::string> transforms;
    int num_slots = 0;
    std::vector<long> steps;
    std::vector<Eigen::MatrixXd> probs;  // K x N per record
    std::vector<Eigen::VectorXd> mu;     // N per record

    std::size_t size() const { return steps.size(); }
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw FormatError(FormatError::Kind::Malformed, "trace: bad number '" + std::string(s) + "' on line " + std::to_string(line_no));
    }
    return v;
}

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

// Distinct hues for up to a few dozen series.
inline std::string series_colour(std::size_t i, std::size_t n) {
    const double hue = 360.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1));
    std::ostringstream s;
    s << "hsl(" << static_cast<int>(hue) << ",70%," << (i % 2 == 0 ? 42 : 58) << "%)";
    return s.str();
}

}  // namespace detail

/// Parses the CSV written by write_trace_csv. The header fixes K and the
/// transform names; every row must have the same width.
inline TraceTable parse_trace_csv(std::istream& in) {
    using K = FormatError::Kind;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(K::Malformed, "trace: empty file");
    const auto header = detail::split_csv_line(line);
    const std::vector<std::string_view> fixed = {"step", "round", "inner_loss", "outer_loss", "kl"};
    if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
        throw FormatError(K::Malformed, "trace: header must start with step,round,inner_loss,outer_loss,kl");
    }
    TraceTable t;
    std::size_t col = fixed.size();
    while (col < header.size() && header[col].starts_with("entropy_")) {
        ++t.num_slots;
        ++col;
    }
    if (t.num_slots == 0) throw FormatError(K::Malformed, "trace: no entropy columns");
    const std::size_t first_prob = col;
    while (col < header.size() && header[col].starts_with("p0_")) {
        t.transforms.emplace_back(header[col].substr(3));
        ++col;
    }
    const std::size_t n = t.transforms.size();
    if (n == 0) throw FormatError(K::Malformed, "trace: no probability columns");
    const std::size_t k = static_cast<std::size_t>(t.num_slots);
    if (header.size() != first_prob + k * n + n) throw FormatError(K::Malformed, "trace: header width does not match K and N");
    for (std::size_t s = 0; s < k; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::string expect = "p" + std::to_string(s) + "_" + t.transforms[i];
            if (header[first_prob + s * n + i] != expect) throw FormatError(K::Malformed, "trace: expected column " + expect);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (header[first_prob + k * n + i] != "mu_" + t.transforms[i]) {
            throw FormatError(K::Malformed, "trace: expected column mu_" + t.transforms[i]);
        }
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw FormatError(K::Malformed, "trace: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                                " fields, expected " + std::to_string(header.size()));
        }
        t.steps.push_back(static_cast<long>(detail::parse_double(cells[0], line_no)));
        Eigen::MatrixXd p(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        for (std::size_t s = 0; s < k; ++s)
            for (std::size_t i = 0; i < n; ++i)
                p(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = detail::parse_double(cells[first_prob + s * n + i], line_no);
        Eigen::VectorXd m(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) m[static_cast<Eigen::Index>(i)] = detail::parse_double(cells[first_prob + k * n + i], line_no);
        t.probs.push_back(std::move(p));
        t.mu.push_back(std::move(m));
    }
    return t;
}

/// Rows = records, columns = transforms; each entry averaged over slots.
inline Eigen::MatrixXd averaged_curves(const TraceTable& t) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(t.transforms.size()));
    for (std::size_t r = 0; r < t.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = t.probs[r].colwise().mean();
    return out;
}

inline void write_curves_csv(const TraceTable& t, std::ostream& out) {
    out << "step";
    for (const auto& name : t.transforms) out << ',' << name;
    out << '\n';
    out.precision(std::numeric_limits<double>::max_digits10);
    const Eigen::MatrixXd c = averaged_curves(t);
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
        out << t.steps[static_cast<std::size_t>(r)];
        for (Eigen::Index i = 0; i < c.cols(); ++i) out << ',' << c(r, i);
        out << '\n';
    }
}

inline std::string curves_svg(const TraceTable& t) {
    constexpr double W = 760, H = 420, left = 60, right = 170, top = 20, bottom = 40;
    const double pw = W - left - right;
    const double ph = H - top - bottom;
    const Eigen::MatrixXd c = averaged_curves(t);
    const double ymax = c.size() > 0 ? std::max(c.maxCoeff() * 1.05, 1e-6) : 1.0;
    const double s0 = t.steps.empty() ? 0.0 : static_cast<double>(t.steps.front());
    const double s1 = t.steps.empty() ? 1.0 : static_cast<double>(t.steps.back());
    const double span = s1 > s0 ? s1 - s0 : 1.0;
    auto px = [&](double step) { return left + (t.size() > 1 ? (step - s0) / span : 0.5) * pw; };
    auto py = [&](double p) { return top + ph * (1.0 - p / ymax); };

    std::ostringstream s;
    s.precision(6);
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">outer step</text>\n"
      << "<text x=\"14\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 14 " << top + ph / 2
      << ")\" text-anchor=\"middle\">mean slot probability</text>\n"
      << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << ymax << "</text>\n"
      << "<text x=\"" << left - 6 << "\" y=\"" << top + ph + 4 << "\" text-anchor=\"end\">0</text>\n";
    const std::size_t n = t.transforms.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::string colour = detail::series_colour(i, n);
        s << "<g stroke=\"" << colour << "\" fill=\"" << colour << "\">\n";
        if (t.size() > 1) {
            s << "<polyline fill=\"none\" stroke-width=\"1.5\" points=\"";
            for (std::size_t r = 0; r < t.size(); ++r) {
                s << (r ? " " : "") << px(static_cast<double>(t.steps[r])) << ','
                  << py(c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)));
            }
            s << "\"/>\n";
        } else if (t.size() == 1) {
            s << "<circle r=\"3\" cx=\"" << px(s0) << "\" cy=\"" << py(c(0, static_cast<Eigen::Index>(i))) << "\"/>\n";
        }
        const double ly = top + 12.0 * static_cast<double>(i) + 6.0;
        s << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 7 << "\" width=\"10\" height=\"8\"/>\n"
          << "<text stroke=\"none\" fill=\"black\" x=\"" << left + pw + 26 << "\" y=\"" << ly << "\">"
          << detail::xml_escape(t.transforms[i]) << "</text>\n</g>\n";
    }
    s << "</svg>\n";
    return s.str();
}

struct PieSlice {
    std::string name;
    double probability = 0.0;
    double radius = 1.0;  // fraction of the full radius
};

/// Slice angle proportional to probability, slice radius proportional to mu;
/// parameter-free transforms are drawn at full radius.
inline std::vector<PieSlice> pie_slices(const std::vector<std::string>& names, const Eigen::VectorXd& probs, const Eigen::VectorXd& mu) {
    if (probs.size() != static_cast<Eigen::Index>(names.size()) || mu.size() != probs.size()) {
        throw ArgumentError("pie: names, probabilities and mu must have equal length");
    }
    std::vector<PieSlice> out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto id = transform_from_string(names[i]);
        const bool full = id && spec_of(*id).parameter_free;
        out.push_back({names[i], probs[static_cast<Eigen::Index>(i)], full ? 1.0 : std::clamp(mu[static_cast<Eigen::Index>(i)], 0.0, 1.0)});
    }
    return out;
}

inline std::vector<PieSlice> pie_slices(const Policy& p) {
    std::vector<std::string> names;
    for (TransformId id : p.transforms) names.emplace_back(to_string(id));
    return pie_slices(names, mean_probabilities(p), p.mag_upper);
}

inline std::vector<PieSlice> pie_slices(const TraceTable& t) {
    if (t.size() == 0) throw ArgumentError("pie: trace has no records");
    return pie_slices(t.transforms, t.probs.back().colwise().mean().transpose(), t.mu.back());
}

inline std::string pie_svg(const std::vector<PieSlice>& slices) {
    constexpr double W = 560, H = 420, cx = 200, cy = 210, R = 180;
    double total = 0.0;
    for (const auto& sl : slices) total += std::max(sl.probability, 0.0);
    if (!(total > 0.0)) throw ArgumentError("pie: probabilities sum to zero");
    std::ostringstream s;
    s.precision(8);
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << R << "\" fill=\"none\" stroke=\"#bbb\" stroke-dasharray=\"3 3\"/>\n";
    double angle = -std::numbers::pi / 2.0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const PieSlice& sl = slices[i];
        const double sweep = 2.0 * std::numbers::pi * std::max(sl.probability, 0.0) / total;
        const double r = R * sl.radius;
        const std::string colour = detail::series_colour(i, slices.size());
        s << "<path data-name=\"" << detail::xml_escape(sl.name) << "\" data-angle=\"" << sweep << "\" fill=\"" << colour
          << "\" stroke=\"white\" stroke-width=\"0.5\" d=\"";
        if (sweep >= 2.0 * std::numbers::pi - 1e-9) {
            // A single arc cannot close a full circle; draw two halves.
            s << "M " << cx << ' ' << cy - r << " A " << r << ' ' << r << " 0 1 1 " << cx << ' ' << cy + r << " A " << r << ' ' << r
              << " 0 1 1 " << cx << ' ' << cy - r << " Z";
        } else if (sweep > 0.0) {
            const double a1 = angle + sweep;
            s << "M " << cx << ' ' << cy << " L " << cx + r * std::cos(angle) << ' ' << cy + r * std::sin(angle) << " A " << r << ' '
              << r << " 0 " << (sweep > std::numbers::pi ? 1 : 0) << " 1 " << cx + r * std::cos(a1) << ' ' << cy + r * std::sin(a1)
              << " Z";
        }
        s << "\"/>\n";
        angle += sweep;
        const double ly = 20.0 + 13.0 * static_cast<double>(i);
        s << "<rect x=\"410\" y=\"" << ly - 8 << "\" width=\"10\" height=\"9\" fill=\"" << colour << "\"/>\n"
          << "<text x=\"426\" y=\"" << ly << "\">" << detail::xml_escape(sl.name) << ' ' << std::round(sl.probability * 1000.0) / 10.0
          << "%</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace augsearch
