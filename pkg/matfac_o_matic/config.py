# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Flat key=value configuration files. One setting per line, '#' starts a
# comment, blank lines are ignored. Values are coerced to bool, int, float
# or a comma-separated list of those, in that order of preference. A value
# in double quotes is a literal string; backslash escapes \" \\ and \n.

import pathlib

from matfac_o_matic.errors import ValidationError


_TRUE = ('true', 'yes', 'on')
_FALSE = ('false', 'no', 'off')


def _coerce(text):
    text = text.strip()
    if ',' in text:
        return [_coerce(part) for part in text.split(',') if part.strip()]
    low = text.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    if low in ('none', ''):
        return None
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


_ESCAPES = {'"': '"', '\\': '\\', 'n': '\n'}


def _quote(text):
    return '"%s"' % text.replace('\\', '\\\\').replace('"', '\\"') \
        .replace('\n', '\\n')


def _unquote(text, lineno):
    '''
    Split a line remainder starting with '"' into (string, rest).
    '''
    chars = []
    k = 1
    while k < len(text):
        c = text[k]
        if c == '"':
            return ''.join(chars), text[k + 1:]
        if c == '\\':
            k += 1
            if k == len(text) or text[k] not in _ESCAPES:
                raise ValidationError('Config line %d has a bad escape'
                                      % lineno)
            c = _ESCAPES[text[k]]
        chars.append(c)
        k += 1
    raise ValidationError('Config line %d has an unterminated quote'
                          % lineno)


def _render(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return 'none'
    if isinstance(value, (list, tuple)):
        return ','.join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        if value != value.strip() or _coerce(value) != value or \
                any(c in value for c in ',#"\\\n'):
            return _quote(value)
        return value
    return str(value)


def parse_config(text):
    '''
    Parse key=value text into a dict, preserving file order.
    '''
    config = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        head = line.split('#', 1)[0].strip()
        if not head:
            continue
        if '=' not in head:
            raise ValidationError(
                'Config line %d is not key=value: %r' % (lineno, head))
        key, value = line.split('=', 1)
        key = key.strip()
        if not key:
            raise ValidationError('Config line %d has an empty key' % lineno)
        if key in config:
            raise ValidationError(
                'Config key %r repeated on line %d' % (key, lineno))
        value = value.lstrip()
        if value.startswith('"'):
            value, rest = _unquote(value, lineno)
            if rest.split('#', 1)[0].strip():
                raise ValidationError('Config line %d has text after a '
                                      'quoted value' % lineno)
            config[key] = value
        else:
            config[key] = _coerce(value.split('#', 1)[0])
    return config


def load_config(path):
    if path is None:
        return {}
    return parse_config(pathlib.Path(path).read_text(encoding='utf-8'))


def dump_config(mapping):
    return ''.join('%s=%s\n' % (key, _render(value))
                   for key, value in mapping.items())


def save_config(mapping, path):
    pathlib.Path(path).write_text(dump_config(mapping), encoding='utf-8')


def check_keys(mapping, known, where):
    '''
    Reject keys a config section does not understand.
    '''
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        raise ValidationError('Unknown %s setting(s): %s'
                              % (where, ', '.join(unknown)))


def as_tuple(value, kind=float):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(kind(v) for v in value)
    return (kind(value),)
