// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "tinynlp/data.hpp"

using namespace tinynlp;

namespace {

const std::vector<std::string> kIronyLabels{"non-ironic", "ironic"};

}  // namespace

TEST(LoadDataset, EmptyFileWithHeaderGivesEmptyList) {
  auto rows = parse_dataset("id\ttext\tlabel\n", kIronyLabels);
  EXPECT_TRUE(rows.empty());
}

TEST(LoadDataset, MapsLabelsByDeclaredOrder) {
  auto rows = parse_dataset("a1\thello there\tironic\na2\tokay\tnon-ironic\n", kIronyLabels);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].label, 1);
  EXPECT_EQ(rows[1].label, 0);
  EXPECT_EQ(rows[0].text, "hello there");
}

TEST(LoadDataset, UnknownLabelNamesLine) {
  try {
    parse_dataset("a1\tx\tironic\na2\ty\tmaybe\n", kIronyLabels);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadDataset, DuplicateIdRejected) {
  EXPECT_THROW(parse_dataset("a1\tx\tironic\na1\ty\tironic\n", kIronyLabels), ParseError);
}

TEST(LoadDataset, MalformedRowRejected) {
  try {
    parse_dataset("a1\tx\tironic\nbroken row\n", kIronyLabels);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadDataset, AcceptsFourThousandRows) {
  std::string content = "id\ttext\tlabel\n";
  for (int i = 0; i < 4024; ++i) {
    content += "t" + std::to_string(i) + "\tsome words here\t" +
               kIronyLabels[static_cast<std::size_t>(i % 2)] + "\n";
  }
  auto rows = parse_dataset(content, kIronyLabels);
  EXPECT_EQ(rows.size(), 4024u);
}

TEST(LoadDataset, OptionalStripPatternRemovesMatches) {
  auto rows = parse_dataset("a1\tkeep #tag this\tironic\n", kIronyLabels,
                            std::string("#\\w+ ?"));
  EXPECT_EQ(rows[0].text, "keep this");
}

namespace {

std::vector<Example> synthetic_rows(int n) {
  std::vector<Example> rows;
  for (int i = 0; i < n; ++i) {
    rows.push_back({"r" + std::to_string(i), "text " + std::to_string(i), i % 2});
  }
  return rows;
}

std::multiset<std::string> ids_of(const std::vector<Example>& v) {
  std::multiset<std::string> s;
  for (const auto& e : v) s.insert(e.id);
  return s;
}

}  // namespace

TEST(SplitTrainDev, ReproducesPaperSizes) {
  TrainDevSplit s = split_train_dev(synthetic_rows(4024), 0.10, 1);
  EXPECT_EQ(s.train.size(), 3621u);
  EXPECT_EQ(s.dev.size(), 403u);
}

TEST(SplitTrainDev, TenRowsAtTenPercent) {
  TrainDevSplit s = split_train_dev(synthetic_rows(10), 0.10, 1);
  EXPECT_EQ(s.train.size(), 9u);
  EXPECT_EQ(s.dev.size(), 1u);
}

TEST(SplitTrainDev, DisjointUnionPreserved) {
  auto rows = synthetic_rows(101);
  TrainDevSplit s = split_train_dev(rows, 0.25, 7);
  EXPECT_EQ(s.train.size() + s.dev.size(), rows.size());
  std::multiset<std::string> all = ids_of(s.train);
  for (const auto& e : s.dev) all.insert(e.id);
  EXPECT_EQ(all, ids_of(rows));
}

TEST(SplitTrainDev, SameSeedSameMembership) {
  TrainDevSplit a = split_train_dev(synthetic_rows(50), 0.2, 9);
  TrainDevSplit b = split_train_dev(synthetic_rows(50), 0.2, 9);
  EXPECT_EQ(ids_of(a.dev), ids_of(b.dev));
}

TEST(SplitTrainDev, InvariantToInputRowOrder) {
  auto rows = synthetic_rows(40);
  auto reversed = rows;
  std::reverse(reversed.begin(), reversed.end());
  TrainDevSplit a = split_train_dev(rows, 0.2, 3);
  TrainDevSplit b = split_train_dev(reversed, 0.2, 3);
  EXPECT_EQ(ids_of(a.dev), ids_of(b.dev));
  EXPECT_EQ(ids_of(a.train), ids_of(b.train));
}

TEST(SplitTrainDev, StratifiedBalancesClasses) {
  std::vector<Example> rows;
  for (int i = 0; i < 80; ++i) rows.push_back({"a" + std::to_string(i), "x", 0});
  for (int i = 0; i < 20; ++i) rows.push_back({"b" + std::to_string(i), "x", 1});
  TrainDevSplit s = split_train_dev(rows, 0.10, 5, /*stratified=*/true);
  int dev_minority = 0;
  for (const auto& e : s.dev) dev_minority += e.label == 1;
  EXPECT_EQ(dev_minority, 2);
  EXPECT_EQ(s.dev.size(), 10u);
}

TEST(SplitTrainDev, RejectsDegenerateInputs) {
  EXPECT_THROW(split_train_dev(synthetic_rows(1), 0.1, 1), DataError);
  EXPECT_THROW(split_train_dev(synthetic_rows(10), 0.0, 1), ConfigError);
  EXPECT_THROW(split_train_dev(synthetic_rows(10), 1.0, 1), ConfigError);
}
