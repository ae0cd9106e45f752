from src.exceptions import DivergenceError, RepairError
from src.utils.parallel import ordered_map
from src.utils.response_normalizer import error_response, is_valid_response, normalize_exception, success_response


def test_success_response():
    response = success_response('done', {'improvement': 1.0})
    assert response == {'success': True, 'schema_version': 1, 'message': 'done', 'data': {'improvement': 1.0}}
    assert 'data' not in success_response('done')
    assert is_valid_response(response)


def test_error_response():
    response = error_response('bad', 'config')
    assert response == {'success': False, 'schema_version': 1, 'message': 'bad', 'error_code': 'config'}
    assert is_valid_response(response)


def test_normalize_exception():
    assert normalize_exception(DivergenceError('nan loss'))['error_code'] == 'divergence'
    assert normalize_exception(RepairError('x'))['error_code'] == 'repair_error'
    internal = normalize_exception(KeyError('k'))
    assert internal['error_code'] == 'internal'
    assert internal['message'].startswith('KeyError')


def test_is_valid_response_rejects_mixed_envelopes():
    assert not is_valid_response({'success': True, 'error_code': 'x'})
    assert not is_valid_response({'success': False, 'data': {}})
    assert not is_valid_response({'message': 'no flag'})
    assert not is_valid_response(['success'])


def test_ordered_map_keeps_input_order():
    items = list(range(50))
    assert ordered_map(lambda i: i * i, items, threads=8) == [i * i for i in items]
    assert ordered_map(str, [], threads=4) == []
