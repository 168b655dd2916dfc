# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
