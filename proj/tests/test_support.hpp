#pragma once

#include <gtest/gtest.h>

#include "support_core.hpp"

#define EXPECT_ERRC(stmt, errc)                                                  \
    do {                                                                         \
        try {                                                                    \
            stmt;                                                                \
            ADD_FAILURE() << "expected " #errc " from " #stmt;                   \
        } catch (const distill::Error& e_) {                                     \
            EXPECT_EQ(e_.code(), distill::Errc::errc) << e_.what();              \
        }                                                                        \
    } while (0)
