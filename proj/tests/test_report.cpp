// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <regex>
#include <string>
#include <vector>

#include "droprate/report.hpp"

using namespace droprate;
using Catch::Matchers::ContainsSubstring;

namespace {

std::vector<MetricsRecord> trace(double offset) {
  return {{0, 4.2 + offset, 4.1 + offset, 0.2, 1.0},
          {100, 2.6 + offset, 2.55 + offset, 0.16, 20.0},
          {200, 2.4 + offset, 2.61 + offset, 0.12, 40.0}};
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

const std::vector<std::string> kFive = {"baseline", "linear", "exponential", "val_adaptive", "cosine"};

}  // namespace

TEST_CASE("FTL is the last train loss and BVL the lowest val loss") {
  const ComparisonRow r = comparison_row("linear", trace(0.0), 90.0, 123.456);
  CHECK(r.ftl == 2.4);
  CHECK(r.bvl == 2.55);
  CHECK(r.ttt_minutes == 1.5);
  CHECK(r.ais == 123.456);
  CHECK_THROWS_AS(comparison_row("x", {}, 1.0, 1.0), InputError);
}

TEST_CASE("markdown report has the five columns and fixed decimals") {
  ComparisonReport rep;
  rep.rows.push_back(comparison_row("baseline", trace(0.0), 90.0, 123.456));
  rep.rows.push_back(comparison_row("linear", trace(0.01), 30.0, 99.0));
  const std::string md = render_markdown(rep);
  CHECK(md.starts_with("| Schedule | FTL | BVL | TTT | AIS |\n|---|---|---|---|---|\n"));
  CHECK_THAT(md, ContainsSubstring("| baseline | 2.4000 | 2.5500 | 1.50 | 123.46 |"));
  CHECK_THAT(md, ContainsSubstring("| linear | 2.4100 | 2.5600 | 0.50 | 99.00 |"));
  CHECK_FALSE(md.find("PARTIAL") != std::string::npos);

  ComparisonRow bad;
  bad.schedule = "cosine";
  bad.diverged = true;
  bad.note = "diverged at iteration 7";
  rep.rows.push_back(bad);
  rep.partial = true;
  const std::string partial = render_markdown(rep);
  CHECK_THAT(partial, ContainsSubstring("| cosine | - | - | - | - |"));
  CHECK_THAT(partial, ContainsSubstring("PARTIAL RESULTS: cosine: diverged at iteration 7."));
}

TEST_CASE("metrics csv round-trips") {
  std::string text = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : trace(0.0)) text += metrics_csv_row(r) + "\n";
  const auto back = parse_metrics_csv(text);
  REQUIRE(back.size() == 3);
  CHECK(back[1].iter == 100);
  CHECK(back[1].train_loss == 2.6);
  CHECK(back[1].dropout_p == 0.16);
  CHECK(parse_metrics_csv(std::string(kMetricsCsvHeader) + "\r\n0,1,2,0.2,0\r\n").size() == 1);
}

TEST_CASE("csv errors name the offending line") {
  const std::string h = std::string(kMetricsCsvHeader) + "\n";
  CHECK_THROWS_WITH(parse_metrics_csv(h + "0,1,2,0.2,0\n5,abc,2,0.2,0\n"),
                    ContainsSubstring("line 3") && ContainsSubstring("train_loss"));
  CHECK_THROWS_WITH(parse_metrics_csv(h + "0,1,2\n"), ContainsSubstring("line 2: expected 5 fields, got 3"));
  CHECK_THROWS_WITH(parse_metrics_csv("iter,loss\n0,1\n"), ContainsSubstring("line 1"));
  CHECK_THROWS_WITH(parse_metrics_csv(h), ContainsSubstring("no data rows"));
  CHECK_THROWS_WITH(parse_metrics_csv(""), ContainsSubstring("missing header"));
  CHECK_THROWS_AS(parse_combined_csv(std::string(kCombinedCsvHeader) + "\n,0,1,2,0.2\n"), InputError);
}

TEST_CASE("loss chart has one train and one val series and a legend entry per schedule") {
  std::string csv = std::string(kCombinedCsvHeader) + "\n";
  for (std::size_t i = 0; i < kFive.size(); ++i) csv += combined_csv_rows(kFive[i], trace(0.05 * i));
  const auto rows = parse_combined_csv(csv);
  CHECK(rows.size() == 15);
  const std::string svg = render_svg(rows);
  CHECK(svg == render_svg(parse_combined_csv(csv)));
  CHECK(svg.starts_with("<svg"));
  CHECK_THAT(svg, ContainsSubstring("<g class=\"panel\" id=\"train\">"));
  CHECK_THAT(svg, ContainsSubstring("<g class=\"panel\" id=\"val\">"));
  CHECK_THAT(svg, ContainsSubstring(">iteration</text>"));
  CHECK_THAT(svg, ContainsSubstring(">loss</text>"));
  CHECK(count(svg, "<polyline class=\"series\"") == 10);
  CHECK(count(svg, "<g class=\"legend\">") == 10);
  const auto val_start = svg.find("id=\"val\"");
  for (const auto& s : kFive) {
    const std::string tag = "data-schedule=\"" + s + "\"";
    CHECK(count(svg, tag) == 2);
    CHECK(svg.find(tag) < val_start);
    CHECK(svg.rfind(tag) > val_start);
  }
  // Every polyline carries one point per evaluation.
  const std::regex points("points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), points); it != std::sregex_iterator(); ++it)
    CHECK(count((*it)[1].str(), ",") == 3);
  CHECK_THROWS_AS(render_svg({}), InputError);
}

TEST_CASE("labels are escaped in the chart") {
  const std::string svg = render_svg({{"a<b&c", 0, 1.0, 1.0, 0.1}, {"a<b&c", 10, 0.5, 0.6, 0.1}});
  CHECK_THAT(svg, ContainsSubstring("a&lt;b&amp;c"));
  CHECK(svg.find("a<b") == std::string::npos);
}
