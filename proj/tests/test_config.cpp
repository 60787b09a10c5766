// Copyright 2026 The mflab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "mflab/config.hpp"

using mflab::KeyValueConfig;

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto kv = KeyValueConfig::parse(
      "# header\n"
      "length = 6.5   # torus\n"
      "sites=8\n"
      "\n"
      "N_list = 1, 2 4\n"
      "flag = yes\n"
      "name = gaussian\n");
  EXPECT_DOUBLE_EQ(kv.get_double("length"), 6.5);
  EXPECT_EQ(kv.get_int("sites"), 8);
  EXPECT_EQ(kv.get_doubles("N_list"), (std::vector<double>{1, 2, 4}));
  EXPECT_TRUE(kv.get_bool("flag", false));
  EXPECT_EQ(kv.get_string("name"), "gaussian");
  EXPECT_EQ(kv.get_int("missing", 3), 3);
  EXPECT_FALSE(kv.has("missing"));
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(KeyValueConfig::parse("no equals sign"), std::invalid_argument);
  EXPECT_THROW(KeyValueConfig::parse(" = 3"), std::invalid_argument);
  const auto kv = KeyValueConfig::parse("a = 1.5x\nb = 2.5\nc = maybe");
  EXPECT_THROW(kv.get_double("a"), std::invalid_argument);
  EXPECT_THROW(kv.get_int("b"), std::invalid_argument);
  EXPECT_THROW(kv.get_bool("c", true), std::invalid_argument);
  EXPECT_THROW(kv.get_string("zzz"), std::invalid_argument);
}

TEST(Config, CanonicalFormIsOrderIndependent) {
  const auto a = KeyValueConfig::parse("b=2\na=1\n");
  const auto b = KeyValueConfig::parse("a = 1\nb = 2\n");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(mflab::fnv1a64(a.canonical()), mflab::fnv1a64(b.canonical()));
  EXPECT_NE(mflab::fnv1a64("a=1\n"), mflab::fnv1a64("a=2\n"));
}
