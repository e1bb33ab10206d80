#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <numbers>
#include <sstream>

#include "augsearch/report.hpp"

namespace augsearch {
namespace {

namespace pt = boost::property_tree;

pt::ptree parse_xml(const std::string& text) {
    std::istringstream in(text);
    pt::ptree tree;
    pt::read_xml(in, tree);
    return tree;
}

const char* kTrace =
    "step,round,inner_loss,outer_loss,kl,entropy_0,entropy_1,p0_Identity,p0_Rotate,p1_Identity,p1_Rotate,mu_Identity,mu_Rotate\n"
    "1,1,0.9,0.8,0,0.69,0.69,0.5,0.5,0.5,0.5,0.75,0.75\n"
    "2,1,0.8,0.7,0.01,0.6,0.6,0.4,0.6,0.2,0.8,0.75,0.5\n";

TEST(TraceCsv, ParsesHeaderAndRows) {
    std::istringstream in(kTrace);
    const TraceTable t = parse_trace_csv(in);
    EXPECT_EQ(t.num_slots, 2);
    EXPECT_EQ(t.transforms, (std::vector<std::string>{"Identity", "Rotate"}));
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.steps[1], 2);
    EXPECT_DOUBLE_EQ(t.probs[1](1, 1), 0.8);
    EXPECT_DOUBLE_EQ(t.mu[1][1], 0.5);
    const Eigen::MatrixXd c = averaged_curves(t);
    EXPECT_NEAR(c(1, 0), 0.3, 1e-15);
    EXPECT_NEAR(c(1, 1), 0.7, 1e-15);
}

TEST(TraceCsv, RejectsMalformedInput) {
    for (const std::string& bad : {std::string(""), std::string("a,b,c\n1,2,3\n"),
                                  std::string("step,round,inner_loss,outer_loss,kl,entropy_0,p0_A,mu_B\n"),
                                  std::string("step,round,inner_loss,outer_loss,kl,entropy_0,p0_A,mu_A\n1,1,0,0,0,0,x,1\n"),
                                  std::string("step,round,inner_loss,outer_loss,kl,entropy_0,p0_A,mu_A\n1,1,0,0,0,0\n")}) {
        std::istringstream in(bad);
        EXPECT_THROW(parse_trace_csv(in), FormatError) << bad;
    }
}

TEST(CurvesCsv, OneLinePerRecord) {
    std::istringstream in(kTrace);
    std::ostringstream out;
    write_curves_csv(parse_trace_csv(in), out);
    std::istringstream lines(out.str());
    std::string header, row;
    std::getline(lines, header);
    EXPECT_EQ(header, "step,Identity,Rotate");
    int rows = 0;
    while (std::getline(lines, row)) ++rows;
    EXPECT_EQ(rows, 2);
}

TEST(CurvesSvg, WellFormedWithOneSeriesPerTransform) {
    std::istringstream in(kTrace);
    const pt::ptree tree = parse_xml(curves_svg(parse_trace_csv(in)));
    int polylines = 0;
    for (const auto& [name, child] : tree.get_child("svg"))
        if (name == "g") polylines += static_cast<int>(child.count("polyline"));
    EXPECT_EQ(polylines, 2);
}

TEST(CurvesSvg, SingleRecordStillRenders) {
    const std::string one =
        "step,round,inner_loss,outer_loss,kl,entropy_0,p0_Identity,p0_Invert,mu_Identity,mu_Invert\n1,1,0,0,0,0.69,0.5,0.5,1,1\n";
    std::istringstream in(one);
    const pt::ptree tree = parse_xml(curves_svg(parse_trace_csv(in)));
    int points = 0;
    for (const auto& [name, child] : tree.get_child("svg"))
        if (name == "g") points += static_cast<int>(child.count("circle"));
    EXPECT_EQ(points, 2);
}

TEST(PieSvg, UniformPolicyGivesEqualAngles) {
    const Policy p = uniform_policy(3, 17);
    const pt::ptree tree = parse_xml(pie_svg(pie_slices(p)));
    std::vector<double> angles;
    for (const auto& [name, child] : tree.get_child("svg"))
        if (name == "path") angles.push_back(child.get<double>("<xmlattr>.data-angle"));
    ASSERT_EQ(angles.size(), 17u);
    for (double a : angles) EXPECT_NEAR(a, 2.0 * std::numbers::pi / 17.0, 1e-6);
}

TEST(PieSlices, RadiusFollowsMuExceptParameterFree) {
    Policy p = uniform_policy(1, 17);
    p.mag_upper.setConstant(0.25);
    for (const PieSlice& s : pie_slices(p)) {
        const auto id = transform_from_string(s.name);
        ASSERT_TRUE(id);
        EXPECT_EQ(s.radius, spec_of(*id).parameter_free ? 1.0 : 0.25) << s.name;
    }
}

TEST(PieSvg, SingleTransformDrawsAFullDisc) {
    const std::vector<PieSlice> one = {{"Rotate", 1.0, 0.5}};
    const pt::ptree tree = parse_xml(pie_svg(one));
    EXPECT_NEAR(tree.get<double>("svg.path.<xmlattr>.data-angle"), 2.0 * std::numbers::pi, 1e-6);
    EXPECT_THROW(pie_svg({{"Rotate", 0.0, 0.5}}), ArgumentError);
}

TEST(PieSvg, EscapesNames) {
    const std::vector<PieSlice> s = {{"a<b&c", 0.5, 1.0}, {"d", 0.5, 1.0}};
    EXPECT_NO_THROW(parse_xml(pie_svg(s)));
}

}  // namespace
}  // namespace augsearch
